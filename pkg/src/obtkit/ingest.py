"""Reading minute-epoch activity files, demographics and the sleep questionnaire.

The epoch CSV is PAXRAW-like.  Recognised columns (header required):

    SEQN        subject id
    date        ISO calendar date of the minute  (or PAXDAY, 1=Sunday .. 7=Saturday)
    minute_of_day  0..1439                       (or PAXHOUR + PAXMINUT)
    PAXN        sequential minute index, contiguous per subject
    PAXINTEN    activity count for the minute
    PAXSTAT, PAXCAL   optional reliability / calibration flags (1 = ok)

:func:`write_epochs` emits the canonical column order
``SEQN,date,minute_of_day,PAXN,PAXINTEN[,PAXSTAT,PAXCAL]``.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import io
import logging
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, NamedTuple, Union

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

Source = Union[str, os.PathLike, IO[str]]

AGE_GROUPS = (
    (6, 10), (11, 16), (17, 22), (23, 28), (29, 34), (35, 40), (41, 46),
    (47, 52), (53, 58), (59, 64), (65, 70), (71, 76), (77, 84),
)
AGE_GROUP_LABELS = tuple(f"{lo}-{hi}" for lo, hi in AGE_GROUPS)
REFERENCE_GROUP = "17-22"
MIN_AGE, MAX_AGE = AGE_GROUPS[0][0], AGE_GROUPS[-1][1]

SLEEP_HOURS_CAP = 11
SLEEP_HOURS_TOPCODE = 12
ONSET_CAP = 50
ONSET_TOPCODE = 60
_REFUSED_HOURS = {77, 99}
_REFUSED_ONSET = {7777, 9999, 77777, 99999}

# Anchor for PAXDAY-only files: a Sunday, so PAXDAY=1 maps onto it.
PAXDAY_ANCHOR = dt.date(2000, 1, 2)

WEIGHT_SCHEMES = ("single-cycle", "combined-two-cycle")


class IngestError(ValueError):
    pass


class EpochFormatError(IngestError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class EpochGapError(EpochFormatError):
    def __init__(self, subject_id: str, position: int, line: int | None = None):
        self.subject_id = subject_id
        self.position = position
        super().__init__(f"subject {subject_id}: missing minute {position}", line)


class RecordError(IngestError):
    pass


class Exclusion(NamedTuple):
    subject_id: str
    stage: str
    reason: str


@dataclass
class EpochSeries:
    """One subject's gap-free minute count stream.

    ``counts[i]`` is the count for ``start + i`` minutes.  ``first_index`` is
    the PAXN value of the first minute, kept so files round-trip.
    """

    subject_id: str
    start: dt.datetime
    counts: np.ndarray
    status_flags: dict[str, np.ndarray] | None = None
    first_index: int = 1

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1 or self.counts.size == 0:
            raise ValueError("counts must be a non-empty 1-d sequence")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")
        if self.start.second or self.start.microsecond:
            raise ValueError("start must be minute aligned")

    def __len__(self) -> int:
        return int(self.counts.size)

    @property
    def end(self) -> dt.datetime:
        """Exclusive end instant of the recording."""
        return self.instant(len(self))

    def instant(self, index: int) -> dt.datetime:
        return self.start + dt.timedelta(minutes=int(index))


@dataclass(frozen=True)
class RecordingSpan:
    """Extent of a recording without its counts (for staged runs from CSV)."""

    subject_id: str
    start: dt.datetime
    n_minutes: int

    def __len__(self) -> int:
        return self.n_minutes

    @property
    def end(self) -> dt.datetime:
        return self.instant(self.n_minutes)

    def instant(self, index: int) -> dt.datetime:
        return self.start + dt.timedelta(minutes=int(index))

    @classmethod
    def of(cls, series: EpochSeries) -> "RecordingSpan":
        return cls(series.subject_id, series.start, len(series))


@dataclass(frozen=True)
class SelfReport:
    sleep_hours: int | None = None
    onset_minutes: int | None = None


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    age_years: int
    sex: str
    age_group: str
    exam_weight: float
    stratum: int | None = None
    psu: int | None = None
    self_report: SelfReport | None = None
    race: str | None = None

    @property
    def is_male(self) -> bool:
        return self.sex == "male"

    @property
    def group_index(self) -> int:
        return AGE_GROUP_LABELS.index(self.age_group)


@dataclass
class Cohort:
    subjects: dict[str, SubjectProfile]
    series: dict[str, EpochSeries]
    weight_scheme: str = "single-cycle"
    exclusions: list[Exclusion] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.subjects)

    def ids(self) -> list[str]:
        return sorted(self.subjects)


def age_group(age: int) -> str:
    """Label of the age bin containing ``age``; raises outside 6-84."""
    for (lo, hi), label in zip(AGE_GROUPS, AGE_GROUP_LABELS):
        if lo <= age <= hi:
            return label
    raise ValueError(f"age {age} outside {MIN_AGE}-{MAX_AGE}")


def top_code_hours(hours: int) -> int:
    return SLEEP_HOURS_TOPCODE if hours > SLEEP_HOURS_CAP else hours


def top_code_onset(minutes: int) -> int:
    return ONSET_TOPCODE if minutes > ONSET_CAP else minutes


# ---------------------------------------------------------------------------
# epoch files

_ID_COLS = ("SEQN", "subject_id", "id")
_COUNT_COLS = ("PAXINTEN", "count")
_INDEX_COLS = ("PAXN", "minute_index")
_FLAG_COLS = ("PAXSTAT", "PAXCAL")


def _pick(columns: Iterable[str], options: Iterable[str]) -> str | None:
    cols = list(columns)
    for name in options:
        if name in cols:
            return name
    return None


def _numeric(frame: pd.DataFrame, col: str) -> np.ndarray:
    raw = frame[col]
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna() | (values != np.floor(values))
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise EpochFormatError(f"column {col}: not an integer: {raw.iloc[row]!r}", line=row + 2)
    return values.to_numpy(dtype=np.int64)


def parse_epochs(source: Source, excluded: list[Exclusion] | None = None) -> list[EpochSeries]:
    """Parse an epoch CSV into one :class:`EpochSeries` per subject.

    Rows may arrive in any order; they are sorted by (subject, PAXN).
    Subjects whose PAXSTAT/PAXCAL flags are anything but 1 are dropped and
    recorded in ``excluded``.
    """
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        return []
    except pd.errors.ParserError as exc:
        raise EpochFormatError(str(exc)) from exc
    if frame.empty:
        return []

    id_col = _pick(frame.columns, _ID_COLS)
    count_col = _pick(frame.columns, _COUNT_COLS)
    index_col = _pick(frame.columns, _INDEX_COLS)
    missing = [name for name, col in (("SEQN", id_col), ("PAXINTEN", count_col), ("PAXN", index_col)) if col is None]
    if "date" not in frame.columns and "PAXDAY" not in frame.columns:
        missing.append("date/PAXDAY")
    if "minute_of_day" not in frame.columns and not {"PAXHOUR", "PAXMINUT"} <= set(frame.columns):
        missing.append("minute_of_day/PAXHOUR+PAXMINUT")
    if missing:
        raise EpochFormatError(f"missing columns: {', '.join(missing)}", line=1)

    ids = frame[id_col].str.strip().to_numpy(dtype=object)
    if (ids == "").any():
        raise EpochFormatError("empty subject id", line=int(np.flatnonzero(ids == "")[0]) + 2)
    counts = _numeric(frame, count_col)
    if (counts < 0).any():
        row = int(np.flatnonzero(counts < 0)[0])
        raise EpochFormatError(f"negative count {counts[row]}", line=row + 2)
    minute_index = _numeric(frame, index_col)

    if "minute_of_day" in frame.columns:
        tod = _numeric(frame, "minute_of_day")
    else:
        tod = _numeric(frame, "PAXHOUR") * 60 + _numeric(frame, "PAXMINUT")
    if ((tod < 0) | (tod >= 1440)).any():
        row = int(np.flatnonzero((tod < 0) | (tod >= 1440))[0])
        raise EpochFormatError("time of day out of range", line=row + 2)

    if "date" in frame.columns:
        dates = pd.to_datetime(frame["date"], format="%Y-%m-%d", errors="coerce")
        if dates.isna().any():
            row = int(np.flatnonzero(dates.isna().to_numpy())[0])
            raise EpochFormatError(f"bad date {frame['date'].iloc[row]!r}", line=row + 2)
        day_number = (dates.to_numpy().astype("datetime64[D]").astype(np.int64))
        paxday = None
    else:
        paxday = _numeric(frame, "PAXDAY")
        if ((paxday < 1) | (paxday > 7)).any():
            row = int(np.flatnonzero((paxday < 1) | (paxday > 7))[0])
            raise EpochFormatError("PAXDAY outside 1..7", line=row + 2)
        day_number = None

    flags = {c: _numeric(frame, c) for c in _FLAG_COLS if c in frame.columns}

    lines = np.arange(len(frame)) + 2
    order = np.lexsort((minute_index, ids.astype(str)))
    ids, counts, minute_index, tod, lines = ids[order], counts[order], minute_index[order], tod[order], lines[order]
    if day_number is not None:
        day_number = day_number[order]
    if paxday is not None:
        paxday = paxday[order]
    flags = {c: v[order] for c, v in flags.items()}

    bounds = np.flatnonzero(ids[1:] != ids[:-1]) + 1
    starts = np.concatenate(([0], bounds))
    stops = np.concatenate((bounds, [len(ids)]))

    out: list[EpochSeries] = []
    epoch_date = dt.date(1970, 1, 1)
    for a, b in zip(starts, stops):
        sid = str(ids[a])
        idx = minute_index[a:b]
        step = np.diff(idx)
        if (step == 0).any():
            k = int(np.flatnonzero(step == 0)[0]) + 1
            raise EpochFormatError(f"subject {sid}: duplicate minute {idx[k]}", line=int(lines[a + k]))
        if (step != 1).any():
            k = int(np.flatnonzero(step != 1)[0])
            raise EpochGapError(sid, int(idx[k]) + 1, line=int(lines[a + k + 1]))

        first_tod = int(tod[a])
        if day_number is not None:
            first_day = epoch_date + dt.timedelta(days=int(day_number[a]))
            absolute = day_number[a:b] * 1440 + tod[a:b]
        else:
            first_day = PAXDAY_ANCHOR + dt.timedelta(days=int(paxday[a]) - 1)
            absolute = None
        start = dt.datetime.combine(first_day, dt.time(first_tod // 60, first_tod % 60))

        offsets = idx - idx[0]
        expected_tod = (first_tod + offsets) % 1440
        mismatch = expected_tod != tod[a:b]
        if absolute is not None:
            mismatch |= absolute != absolute[0] + offsets
        else:
            expected_day = ((int(paxday[a]) - 1) + (first_tod + offsets) // 1440) % 7 + 1
            mismatch |= expected_day != paxday[a:b]
        if mismatch.any():
            k = int(np.flatnonzero(mismatch)[0])
            raise EpochFormatError(
                f"subject {sid}: timestamp inconsistent with minute index {idx[k]}", line=int(lines[a + k])
            )

        sub_flags = {c: v[a:b] for c, v in flags.items()} or None
        if sub_flags and any((v != 1).any() for v in sub_flags.values()):
            bad = [c for c, v in sub_flags.items() if (v != 1).any()]
            reason = "device flagged unreliable/uncalibrated (" + ",".join(bad) + ")"
            log.info("dropping subject %s: %s", sid, reason)
            if excluded is not None:
                excluded.append(Exclusion(sid, "ingest", reason))
            continue
        out.append(EpochSeries(sid, start, counts[a:b], sub_flags, int(idx[0])))
    return out


def epochs_frame(series: Iterable[EpochSeries]) -> pd.DataFrame:
    """Canonical long-format frame for a collection of series."""
    parts = []
    for s in series:
        n = len(s)
        base = (np.datetime64(s.start.date(), "D").astype(np.int64) * 1440
                + s.start.hour * 60 + s.start.minute)
        absolute = base + np.arange(n)
        part = {
            "SEQN": np.full(n, s.subject_id, dtype=object),
            "date": (absolute // 1440).astype("datetime64[D]").astype(str),
            "minute_of_day": absolute % 1440,
            "PAXN": s.first_index + np.arange(n),
            "PAXINTEN": s.counts,
        }
        for c in _FLAG_COLS:
            if s.status_flags and c in s.status_flags:
                part[c] = s.status_flags[c]
        parts.append(pd.DataFrame(part))
    if not parts:
        return pd.DataFrame(columns=["SEQN", "date", "minute_of_day", "PAXN", "PAXINTEN"])
    return pd.concat(parts, ignore_index=True)


def write_epochs(series: Iterable[EpochSeries], dest: Source) -> None:
    epochs_frame(series).to_csv(dest, index=False, lineterminator="\n")


# ---------------------------------------------------------------------------
# demographics and questionnaire

def _open_text(source: Source):
    if hasattr(source, "read"):
        return source
    return open(source, newline="", encoding="utf-8")


def _read_rows(source: Source) -> tuple[list[str], list[tuple[int, dict[str, str]]]]:
    fh = _open_text(source)
    try:
        text = fh.read()
    finally:
        if fh is not source:
            fh.close()
    if not text.strip():
        return [], []
    reader = csv.DictReader(io.StringIO(text))
    rows = [(i + 2, {k.strip(): (v or "").strip() for k, v in row.items() if k is not None})
            for i, row in enumerate(reader)]
    return [c.strip() for c in reader.fieldnames or []], rows


def _get(row: Mapping[str, str], *names: str) -> str:
    for n in names:
        if n in row and row[n] != "":
            return row[n]
    return ""


def _parse_sex(value: str, line: int) -> str:
    v = value.strip().lower()
    if v in ("1", "m", "male"):
        return "male"
    if v in ("2", "f", "female"):
        return "female"
    raise RecordError(f"line {line}: unrecognised sex {value!r}")


def _opt_int(value: str, line: int, what: str) -> int | None:
    if value == "":
        return None
    try:
        return int(float(value))
    except ValueError:
        raise RecordError(f"line {line}: {what} is not a number: {value!r}") from None


def parse_demographics(source: Source, excluded: list[Exclusion] | None = None) -> list[SubjectProfile]:
    """Read subject demographics and survey design columns.

    Accepts NHANES names (SEQN, RIDAGEYR, RIAGENDR, WTMEC2YR, SDMVSTRA,
    SDMVPSU, RIDRETH1) or plain ones (id, age, sex, weight, stratum, psu,
    race).  An optional ``exclusion`` column carries upstream exclusion
    reasons (wheelchair, belt size, ...).
    """
    _, rows = _read_rows(source)
    out = []
    seen = set()
    for line, row in rows:
        sid = _get(row, "SEQN", "subject_id", "id")
        if not sid:
            raise RecordError(f"line {line}: missing subject id")
        if sid in seen:
            raise RecordError(f"line {line}: duplicate subject {sid}")
        seen.add(sid)

        upstream = _get(row, "exclusion")
        if upstream:
            if excluded is not None:
                excluded.append(Exclusion(sid, "ingest", f"upstream: {upstream}"))
            continue

        age = _opt_int(_get(row, "RIDAGEYR", "age", "age_years"), line, "age")
        if age is None:
            raise RecordError(f"line {line}: missing age")
        sex = _parse_sex(_get(row, "RIAGENDR", "sex"), line)
        weight_text = _get(row, "WTMEC2YR", "weight", "exam_weight")
        try:
            weight = float(weight_text)
        except ValueError:
            raise RecordError(f"line {line}: bad weight {weight_text!r}") from None
        if not weight > 0:
            raise RecordError(f"line {line}: non-positive weight {weight_text!r}")

        if age < MIN_AGE or age > MAX_AGE:
            reason = "under 6" if age < MIN_AGE else "85 and over"
            log.info("excluding subject %s: %s", sid, reason)
            if excluded is not None:
                excluded.append(Exclusion(sid, "ingest", reason))
            continue

        out.append(SubjectProfile(
            subject_id=sid,
            age_years=age,
            sex=sex,
            age_group=age_group(age),
            exam_weight=weight,
            stratum=_opt_int(_get(row, "SDMVSTRA", "stratum"), line, "stratum"),
            psu=_opt_int(_get(row, "SDMVPSU", "psu"), line, "psu"),
            race=_get(row, "RIDRETH1", "race") or None,
        ))
    return out


def parse_sleep_questionnaire(source: Source) -> dict[str, SelfReport]:
    """Read sleep duration (SLD010H) and onset latency (SLD020M) answers.

    Durations above 11 h become 12, latencies above 50 min become 60;
    refused / don't-know codes and blanks are left absent.
    """
    _, rows = _read_rows(source)
    out: dict[str, SelfReport] = {}
    for line, row in rows:
        sid = _get(row, "SEQN", "subject_id", "id")
        if not sid:
            raise RecordError(f"line {line}: missing subject id")
        if sid in out:
            raise RecordError(f"line {line}: duplicate subject {sid}")
        hours = _opt_int(_get(row, "SLD010H", "sleep_hours", "hours"), line, "sleep hours")
        onset = _opt_int(_get(row, "SLD020M", "onset_minutes", "onset"), line, "onset minutes")
        if hours in _REFUSED_HOURS:
            hours = None
        if onset in _REFUSED_ONSET:
            onset = None
        if hours is not None:
            if hours < 1:
                raise RecordError(f"line {line}: sleep hours {hours} < 1")
            hours = top_code_hours(hours)
        if onset is not None:
            if onset < 0:
                raise RecordError(f"line {line}: onset minutes {onset} < 0")
            onset = top_code_onset(onset)
        if hours is None and onset is None:
            continue
        out[sid] = SelfReport(hours, onset)
    return out


def join_cohort(
    profiles: Iterable[SubjectProfile],
    series: Iterable[EpochSeries],
    reports: Mapping[str, SelfReport] | None = None,
    weight_scheme: str = "single-cycle",
) -> Cohort:
    """Inner-join profiles and series; attach self-reports; apply the weight scheme.

    Pooling two NHANES cycles halves each two-year weight.
    """
    if weight_scheme not in WEIGHT_SCHEMES:
        raise ValueError(f"unknown weight scheme {weight_scheme!r}")
    reports = reports or {}
    factor = 0.5 if weight_scheme == "combined-two-cycle" else 1.0
    by_id = {p.subject_id: p for p in profiles}
    series_by_id = {s.subject_id: s for s in series}

    exclusions = []
    for sid in sorted(set(series_by_id) - set(by_id)):
        exclusions.append(Exclusion(sid, "join", "no demographic profile"))
    for sid in sorted(set(by_id) - set(series_by_id)):
        exclusions.append(Exclusion(sid, "join", "no accelerometry series"))
    if exclusions:
        log.info("join dropped %d subjects", len(exclusions))

    subjects = {}
    for sid in sorted(set(by_id) & set(series_by_id)):
        p = by_id[sid]
        subjects[sid] = dataclasses.replace(
            p, exam_weight=p.exam_weight * factor, self_report=reports.get(sid, p.self_report)
        )
    kept = {sid: series_by_id[sid] for sid in subjects}
    return Cohort(subjects, kept, weight_scheme, exclusions)
