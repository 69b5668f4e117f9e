import datetime as dt
from collections import Counter
from statistics import fmean

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obtkit.clock import format_clock
from obtkit.ingest import EpochSeries
from obtkit.nonwear import Assessment, classify_days, detect_nonwear
from obtkit.obt import (
    Candidate, NoValidNightsError, ObtRecord, assign_night, candidate_obts, extract_obts, make_record,
    select_obt_per_night, summarize_subject,
)

from conftest import MONDAY, plant, week_of_wear
from oracles import noon_rule

TUESDAY = MONDAY + dt.timedelta(days=1)


def at(day, hour, minute=0):
    return day + dt.timedelta(hours=hour, minutes=minute)


def cand(start, end):
    return Candidate(start, end)


# noon rule ---------------------------------------------------------------------

def test_monday_night():
    assert assign_night(cand(at(MONDAY, 23), at(TUESDAY, 7))) == (MONDAY.date(), "Mon")


def test_daytime_interval_ending_after_noon():
    assert assign_night(cand(at(TUESDAY, 9), at(TUESDAY, 13))) == (TUESDAY.date(), "Tue")


def test_ending_just_before_noon():
    wed = TUESDAY + dt.timedelta(days=1)
    assert assign_night(cand(at(wed, 0, 30), at(wed, 11, 59))) == (TUESDAY.date(), "Tue")
    assert assign_night(at(wed, 12, 0)) == (wed.date(), "Wed")


@settings(max_examples=500)
@given(st.datetimes(dt.datetime(1999, 1, 1), dt.datetime(2030, 1, 1)), st.integers(240, 840))
def test_noon_rule_matches_oracle(end, minutes):
    end = end.replace(second=0, microsecond=0)
    day, weekday = assign_night(cand(end - dt.timedelta(minutes=minutes), end))
    assert day == noon_rule(end)
    assert weekday == ("Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat")[(day.weekday() + 1) % 7]


# candidates --------------------------------------------------------------------

def _candidates(series, **kw):
    intervals = detect_nonwear(series)
    days = classify_days(series, intervals)
    rejected = Counter()
    return candidate_obts(series, intervals, days, rejected=rejected, **kw), rejected


def test_flanked_interval_kept():
    s = plant(week_of_wear(), 1440 + 23 * 60, 2 * 1440 + 7 * 60)
    (c,), _ = _candidates(s)
    assert (c.start, c.end, c.minutes) == (at(MONDAY, 23 + 24), at(MONDAY, 7 + 48), 480)


def test_interval_at_recording_edges_dropped():
    s = plant(week_of_wear(), 0, 400)
    plant(s, len(s) - 400, len(s))
    cands, rejected = _candidates(s)
    assert cands == []
    assert rejected == Counter({"no wear before": 1, "no wear after": 1})


def test_interval_over_14_hours_dropped():
    s = plant(week_of_wear(), 1440 + 600, 1440 + 600 + 15 * 60)
    cands, rejected = _candidates(s)
    assert cands == [] and rejected["duration outside bounds"] == 1


def test_interval_starting_on_invalid_day_dropped():
    s = plant(week_of_wear(), 1440 + 22 * 60, 2 * 1440 + 6 * 60)
    plant(s, 1440 + 300, 1440 + 300 + 650)  # Tuesday now has too much non-wear
    cands, rejected = _candidates(s)
    assert all(c.start.date() != TUESDAY.date() for c in cands)
    assert rejected["starts on invalid day"] >= 1


def test_interval_outside_assessment_dropped():
    s = plant(week_of_wear(days=9), 7 * 1440 + 22 * 60, 8 * 1440 + 6 * 60)
    intervals = detect_nonwear(s)
    days = classify_days(s, intervals, Assessment(s.start, s.start + dt.timedelta(days=9)))
    assert len(candidate_obts(s, intervals, days, Assessment(s.start, s.start + dt.timedelta(days=9)))) == 1
    rejected = Counter()
    assert candidate_obts(s, intervals, days, Assessment.for_series(s, 7), rejected=rejected) == []
    assert rejected["outside assessment window"] == 1


def test_one_active_minute_separates_intervals():
    s = plant(week_of_wear(), 1440, 1440 + 91 + 300)
    s.counts[1440 + 90] = 3000
    # [1440, 1530) is too short; [1531, 1831) is flanked by wear on both sides
    cands, _ = _candidates(s)
    assert [c.minutes for c in cands] == [300]


# selection and features ----------------------------------------------------------

def test_longest_per_night():
    a = cand(at(MONDAY, 13), at(MONDAY, 18))           # 300, assigned Mon
    b = cand(at(MONDAY, 23), at(TUESDAY, 7))           # 480, assigned Mon
    discarded = []
    (r,) = select_obt_per_night("S", [a, b], discarded)
    assert r.obt_d_minutes == 480 and discarded == [a]


def test_tie_keeps_earliest_start():
    early = cand(at(MONDAY, 22), at(TUESDAY, 3))
    late = cand(at(MONDAY, 23), at(TUESDAY, 4))
    for order in ([early, late], [late, early]):
        (r,) = select_obt_per_night("S", order)
        assert r.start == early.start


def test_midpoint_features():
    r = make_record("S", cand(at(MONDAY, 23), at(TUESDAY, 7)))
    assert (r.obt_d_minutes, r.obt_m_linear, r.obt_m_clock) == (480, 180.0, "03:00AM")
    assert isinstance(r.obt_m_linear, float)
    early = make_record("S", cand(at(MONDAY, 19), at(MONDAY, 23) + dt.timedelta(hours=4)))
    assert early.obt_m_linear == -60.0 and early.obt_m_clock == "11:00PM"


def _record(linear, d=480):
    start = MONDAY + dt.timedelta(days=1, minutes=linear - d / 2)
    return make_record("S", cand(start, start + dt.timedelta(minutes=d)))


def test_summary_means():
    s = summarize_subject([_record(240), _record(300)])
    assert s.mean_obt_m_linear == 270 and s.mean_obt_m_clock == "04:30AM"
    single = summarize_subject([_record(200)])
    assert (single.mean_obt_m_linear, single.mean_obt_d, single.nights_used) == (200, 480, 1)


def test_linear_axis_differs_from_clock_averaging():
    a, b = _record(-30), make_record("S", cand(at(TUESDAY, 21) + dt.timedelta(minutes=30),
                                                at(TUESDAY, 21) + dt.timedelta(minutes=30 + 480)))
    assert (a.obt_m_linear, b.obt_m_linear) == (-30, 90)
    s = summarize_subject([a, b])
    assert s.mean_obt_m_linear == 30 and s.mean_obt_m_clock == "00:30AM"
    naive = fmean([(-30) % 1440, 90 % 1440])
    assert format_clock(naive) == "00:30PM" != s.mean_obt_m_clock


def test_summary_errors():
    with pytest.raises(NoValidNightsError):
        summarize_subject([])
    other = ObtRecord("T", MONDAY, MONDAY, MONDAY.date(), "Mon", 0, 0.0)
    with pytest.raises(ValueError):
        summarize_subject([_record(10), other])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(-120, 400), st.integers(240, 700)),
                min_size=1, max_size=7, unique_by=lambda t: t[0]),
       st.integers(-3, 3))
def test_translation_by_whole_weeks(nights, weeks):
    def extract(shift):
        s = week_of_wear(start=MONDAY + dt.timedelta(days=7 * shift), days=9, seed=1)
        for night, mid, dur in nights:
            a = 1440 * (night + 1) + mid - dur // 2
            plant(s, a, a + dur)
        intervals = detect_nonwear(s)
        return extract_obts(s, intervals, classify_days(s, intervals, Assessment.for_series(s, 9)),
                            Assessment.for_series(s, 9))

    base, moved = extract(0), extract(weeks)
    assert len(base) == len(moved)
    for r, m in zip(base, moved):
        assert m.assigned_date - r.assigned_date == dt.timedelta(days=7 * weeks)
        assert (m.assigned_weekday, m.obt_d_minutes, m.obt_m_linear, m.obt_m_clock) == \
            (r.assigned_weekday, r.obt_d_minutes, r.obt_m_linear, r.obt_m_clock)
    assert len({r.assigned_date for r in base}) == len(base)
    assert all(240 <= r.obt_d_minutes <= 840 for r in base)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20000), st.integers(240, 840)), max_size=12))
def test_one_record_per_night(spec):
    cands = [cand(MONDAY + dt.timedelta(minutes=s), MONDAY + dt.timedelta(minutes=s + d)) for s, d in spec]
    recs = select_obt_per_night("S", cands)
    nights = [r.assigned_date for r in recs]
    assert len(nights) == len(set(nights)) == len({assign_night(c)[0] for c in cands})
    for r in recs:
        rivals = [c for c in cands if assign_night(c)[0] == r.assigned_date]
        assert r.obt_d_minutes == max(c.minutes for c in rivals)
        assert r.end - r.start == dt.timedelta(minutes=r.obt_d_minutes)
        midnight = dt.datetime.combine(r.assigned_date + dt.timedelta(days=1), dt.time())
        assert r.obt_m_linear == ((r.start - midnight) + (r.end - midnight)) / dt.timedelta(minutes=1) / 2


def test_zero_count_series_has_no_obt():
    s = EpochSeries("S", MONDAY, np.zeros(7 * 1440, dtype=int))
    intervals = detect_nonwear(s)
    assert extract_obts(s, intervals, classify_days(s, intervals)) == []
