import csv
import datetime as dt
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obtkit.ingest import (
    AGE_GROUP_LABELS, AGE_GROUPS, EpochFormatError, EpochGapError, EpochSeries, RecordError,
    age_group, epochs_frame, join_cohort, parse_demographics, parse_epochs, parse_sleep_questionnaire,
    top_code_hours, top_code_onset, write_epochs,
)

from conftest import make_profile

HEADER = "SEQN,date,minute_of_day,PAXN,PAXINTEN\n"


def epochs_text(rows):
    return HEADER + "".join(f"{sid},{d},{m},{n},{c}\n" for sid, d, m, n, c in rows)


def first_gap_line_by_line(text):
    """Reference reader: walk rows in file order, report the first missing PAXN."""
    last = {}
    for row in csv.DictReader(io.StringIO(text)):
        sid, n = row["SEQN"], int(row["PAXN"])
        if sid in last and n != last[sid] + 1:
            return sid, last[sid] + 1
        last[sid] = n
    return None


def test_three_rows():
    text = epochs_text([("S1", "2005-01-03", 0, 1, 0), ("S1", "2005-01-03", 1, 2, 250), ("S1", "2005-01-03", 2, 3, 0)])
    (s,) = parse_epochs(io.StringIO(text))
    assert s.subject_id == "S1"
    assert s.counts.tolist() == [0, 250, 0]
    assert s.start == dt.datetime(2005, 1, 3)


def test_empty_file():
    assert parse_epochs(io.StringIO("")) == []
    assert parse_epochs(io.StringIO(HEADER)) == []


def test_gap_reports_missing_minute():
    text = epochs_text([("S1", "2005-01-03", 0, 1, 0), ("S1", "2005-01-03", 1, 2, 5), ("S1", "2005-01-03", 3, 4, 0)])
    with pytest.raises(EpochGapError) as err:
        parse_epochs(io.StringIO(text))
    assert (err.value.subject_id, err.value.position) == first_gap_line_by_line(text) == ("S1", 3)
    assert err.value.line == 4


def test_negative_count_and_bad_value_name_line():
    text = epochs_text([("S1", "2005-01-03", 0, 1, 0), ("S1", "2005-01-03", 1, 2, -4)])
    with pytest.raises(EpochFormatError, match="line 3"):
        parse_epochs(io.StringIO(text))
    text = epochs_text([("S1", "2005-01-03", 0, 1, "x")])
    with pytest.raises(EpochFormatError, match="line 2"):
        parse_epochs(io.StringIO(text))


def test_duplicate_and_inconsistent_timestamp():
    dup = epochs_text([("S1", "2005-01-03", 0, 1, 0), ("S1", "2005-01-03", 0, 1, 0)])
    with pytest.raises(EpochFormatError, match="duplicate"):
        parse_epochs(io.StringIO(dup))
    skew = epochs_text([("S1", "2005-01-03", 0, 1, 0), ("S1", "2005-01-03", 5, 2, 0)])
    with pytest.raises(EpochFormatError, match="inconsistent"):
        parse_epochs(io.StringIO(skew))


def test_unsorted_rows_and_midnight_crossing():
    rows = [("S2", "2005-01-04", 0, 11, 7), ("S2", "2005-01-03", 1439, 10, 3), ("S1", "2005-01-03", 5, 1, 1)]
    a, b = parse_epochs(io.StringIO(epochs_text(rows)))
    assert a.subject_id == "S1" and b.subject_id == "S2"
    assert b.start == dt.datetime(2005, 1, 3, 23, 59)
    assert b.counts.tolist() == [3, 7]


def test_paxday_layout():
    text = "SEQN,PAXDAY,PAXHOUR,PAXMINUT,PAXN,PAXINTEN\n" + "".join(
        f"7,{1 if m < 1440 else 2},{(m % 1440) // 60},{m % 60},{m + 1},{m % 3}\n" for m in range(1438, 1442))
    (s,) = parse_epochs(io.StringIO(text))
    assert s.start.weekday() == 6  # Sunday
    assert s.start.hour == 23 and s.start.minute == 58
    assert s.counts.tolist() == [m % 3 for m in range(1438, 1442)]


def test_flagged_subject_dropped():
    text = ("SEQN,date,minute_of_day,PAXN,PAXINTEN,PAXSTAT,PAXCAL\n"
            "A,2005-01-03,0,1,0,1,1\nA,2005-01-03,1,2,0,1,1\n"
            "B,2005-01-03,0,1,0,1,1\nB,2005-01-03,1,2,0,2,1\n")
    excluded = []
    series = parse_epochs(io.StringIO(text), excluded)
    assert [s.subject_id for s in series] == ["A"]
    assert [e.subject_id for e in excluded] == ["B"]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 2000), st.lists(st.integers(0, 40000), min_size=1, max_size=60)),
                min_size=1, max_size=4),
       st.integers(0, 1439))
def test_round_trip(subjects, start_minute):
    series = [EpochSeries(f"P{k}", dt.datetime(2004, 2, 28) + dt.timedelta(minutes=start_minute), counts, None, first)
              for k, (first, counts) in enumerate(subjects)]
    buf = io.StringIO()
    write_epochs(series, buf)
    text = buf.getvalue()
    back = parse_epochs(io.StringIO(text))
    assert [(s.subject_id, s.start, s.first_index, s.counts.tolist()) for s in back] == \
        [(s.subject_id, s.start, s.first_index, s.counts.tolist()) for s in series]
    again = io.StringIO()
    write_epochs(back, again)
    assert again.getvalue() == text


def test_epochs_frame_columns():
    frame = epochs_frame([EpochSeries("S", dt.datetime(2005, 1, 3, 23, 59), [1, 2])])
    assert list(frame.columns) == ["SEQN", "date", "minute_of_day", "PAXN", "PAXINTEN"]
    assert frame["date"].tolist() == ["2005-01-03", "2005-01-04"]
    assert frame["minute_of_day"].tolist() == [1439, 0]


# demographics ---------------------------------------------------------------

def test_demographic_examples():
    text = "id,age,sex,weight\nA,20,F,10000\nB,5,M,100\nC,84,M,1\nD,85,F,3\n"
    excluded = []
    profiles = {p.subject_id: p for p in parse_demographics(io.StringIO(text), excluded)}
    assert profiles["A"].age_group == "17-22" and profiles["A"].sex == "female"
    assert profiles["C"].age_group == "77-84"
    assert {e.subject_id: e.reason for e in excluded} == {"B": "under 6", "D": "85 and over"}


def test_nhanes_columns_and_design():
    text = "SEQN,RIDAGEYR,RIAGENDR,WTMEC2YR,SDMVSTRA,SDMVPSU,RIDRETH1\n21005,19,1,9361.2,39,2,4\n"
    (p,) = parse_demographics(io.StringIO(text))
    assert (p.sex, p.stratum, p.psu, p.race, p.exam_weight) == ("male", 39, 2, "4", 9361.2)


def test_non_positive_weight_is_record_error():
    with pytest.raises(RecordError, match="line 2"):
        parse_demographics(io.StringIO("id,age,sex,weight\nA,20,F,0\n"))


def test_upstream_exclusion_column():
    excluded = []
    out = parse_demographics(io.StringIO("id,age,sex,weight,exclusion\nA,20,F,1,wheelchair\nB,30,M,1,\n"), excluded)
    assert [p.subject_id for p in out] == ["B"]
    assert excluded[0].reason == "upstream: wheelchair"


def test_age_partition():
    for age in range(6, 85):
        hits = [label for (lo, hi), label in zip(AGE_GROUPS, AGE_GROUP_LABELS) if lo <= age <= hi]
        assert hits == [age_group(age)]
    for age in (5, 85):
        with pytest.raises(ValueError):
            age_group(age)


# questionnaire ---------------------------------------------------------------

def test_questionnaire_examples():
    text = "SEQN,SLD010H,SLD020M\n1,13,55\n2,7,10\n3,99,9999\n4,77,\n5,,30\n"
    reports = parse_sleep_questionnaire(io.StringIO(text))
    assert (reports["1"].sleep_hours, reports["1"].onset_minutes) == (12, 60)
    assert (reports["2"].sleep_hours, reports["2"].onset_minutes) == (7, 10)
    assert "3" not in reports and "4" not in reports
    assert (reports["5"].sleep_hours, reports["5"].onset_minutes) == (None, 30)


@pytest.mark.parametrize("row", ["1,0,10", "1,7,-1"])
def test_questionnaire_out_of_range(row):
    with pytest.raises(RecordError):
        parse_sleep_questionnaire(io.StringIO("SEQN,SLD010H,SLD020M\n" + row + "\n"))


@given(st.integers(1, 24), st.integers(0, 200))
def test_top_coding_idempotent(h, m):
    assert top_code_hours(top_code_hours(h)) == top_code_hours(h)
    assert top_code_onset(top_code_onset(m)) == top_code_onset(m)
    assert top_code_hours(h) <= 12 and top_code_onset(m) <= 60


# join ------------------------------------------------------------------------

def _series(sid):
    return EpochSeries(sid, dt.datetime(2005, 1, 3), [0, 1])


def test_join_intersection():
    profiles = [make_profile(s) for s in ("A", "B", "C")]
    cohort = join_cohort(profiles, [_series("A"), _series("B")])
    assert sorted(cohort.subjects) == ["A", "B"]
    assert [(e.subject_id, e.reason) for e in cohort.exclusions] == [("C", "no accelerometry series")]
    assert all(p.self_report is None for p in cohort.subjects.values())


def test_join_series_without_profile():
    cohort = join_cohort([make_profile("A")], [_series("A"), _series("Z")])
    assert [(e.subject_id, e.reason) for e in cohort.exclusions] == [("Z", "no demographic profile")]


@given(st.lists(st.floats(1e-3, 1e6), min_size=1, max_size=20))
def test_combined_cycle_halves_weights(weights):
    profiles = [make_profile(f"S{k}", weight=w) for k, w in enumerate(weights)]
    series = [_series(p.subject_id) for p in profiles]
    single = join_cohort(profiles, series, weight_scheme="single-cycle")
    pooled = join_cohort(profiles, series, weight_scheme="combined-two-cycle")
    total_single = sum(p.exam_weight for p in single.subjects.values())
    total_pooled = sum(p.exam_weight for p in pooled.subjects.values())
    assert np.isclose(total_pooled, total_single / 2, rtol=1e-12)
    assert all(p.exam_weight > 0 for p in pooled.subjects.values())


def test_weight_20000_pooled():
    cohort = join_cohort([make_profile("A", weight=20000)], [_series("A")], weight_scheme="combined-two-cycle")
    assert cohort.subjects["A"].exam_weight == 10000
