"""Objective bedtime (OBT): per-night selection of the in-bed non-wear interval.

OBT-M is kept on a signed linear axis: minutes relative to the midnight
that ends the assigned night, so 04:19 the next morning is +259 and 23:30
the same evening is -30.  Averaging and regression happen on this axis;
clock strings are derived only for display.
"""

from __future__ import annotations

import datetime as dt
import logging
from collections import Counter
from dataclasses import dataclass, field
from statistics import fmean

from .clock import format_clock, weekday_name
from .ingest import EpochSeries
from .nonwear import Assessment, DayRecord, NonWearInterval, nonwear_mask

log = logging.getLogger(__name__)

OBT_MIN_MINUTES = 240
OBT_MAX_MINUTES = 840
NOON = 12


class NoValidNightsError(ValueError):
    pass


@dataclass(frozen=True)
class Candidate:
    start: dt.datetime
    end: dt.datetime
    start_index: int = 0
    end_index: int = 0

    @property
    def minutes(self) -> int:
        return int((self.end - self.start) // dt.timedelta(minutes=1))


@dataclass(frozen=True)
class ObtRecord:
    subject_id: str
    start: dt.datetime
    end: dt.datetime
    assigned_date: dt.date
    assigned_weekday: str
    obt_d_minutes: int
    obt_m_linear: float

    @property
    def obt_m_clock(self) -> str:
        return format_clock(self.obt_m_linear)


@dataclass
class SubjectObtSummary:
    subject_id: str
    mean_obt_d: float
    mean_obt_m_linear: float
    nights_used: int
    per_weekday: dict[str, ObtRecord] = field(default_factory=dict)

    @property
    def mean_obt_m_clock(self) -> str:
        return format_clock(self.mean_obt_m_linear)


def candidate_obts(
    series: EpochSeries,
    intervals: list[NonWearInterval],
    day_records: list[DayRecord],
    assessment: Assessment | None = None,
    min_minutes: int = OBT_MIN_MINUTES,
    max_minutes: int = OBT_MAX_MINUTES,
    rejected: Counter | None = None,
) -> list[Candidate]:
    """Non-wear intervals that qualify as a bedtime.

    Kept intervals last ``min_minutes..max_minutes``, have recorded wear on
    the minute before and the minute after, start on a valid day, and lie
    inside the assessment window (start at or after its start, the
    following wear minute before its end).
    """
    assessment = assessment or Assessment.for_series(series)
    lo, hi = assessment.index_range(series)
    n = len(series)
    mask = nonwear_mask(n, intervals)
    valid_day = {d.date: d.valid for d in day_records}
    rejected = rejected if rejected is not None else Counter()

    out = []
    for iv in intervals:
        s, e = iv.start_index, iv.end_index
        if not min_minutes <= iv.length <= max_minutes:
            rejected["duration outside bounds"] += 1
        elif s == 0 or mask[s - 1]:
            rejected["no wear before"] += 1
        elif e >= n or mask[e]:
            rejected["no wear after"] += 1
        elif s < lo or e >= hi:
            rejected["outside assessment window"] += 1
        elif not valid_day.get(series.instant(s).date(), False):
            rejected["starts on invalid day"] += 1
        else:
            out.append(Candidate(series.instant(s), series.instant(e), s, e))
    return out


def assign_night(candidate) -> tuple[dt.date, str]:
    """Night (calendar date + weekday) an interval belongs to.

    Ending before noon assigns it to the previous day; ending at noon or
    later assigns it to the day it ended.  Accepts a :class:`Candidate`,
    an :class:`ObtRecord` or a bare end ``datetime``.
    """
    end = candidate if isinstance(candidate, dt.datetime) else candidate.end
    day = end.date()
    if end.hour < NOON:
        day -= dt.timedelta(days=1)
    return day, weekday_name(day)


def make_record(subject_id: str, candidate: Candidate) -> ObtRecord:
    day, weekday = assign_night(candidate)
    midnight = dt.datetime.combine(day + dt.timedelta(days=1), dt.time())
    half = (candidate.end - candidate.start) / 2
    mid = candidate.start + half
    linear = (mid - midnight) / dt.timedelta(minutes=1)
    return ObtRecord(subject_id, candidate.start, candidate.end, day, weekday, candidate.minutes, float(linear))


def select_obt_per_night(subject_id: str, candidates: list[Candidate], discarded: list | None = None) -> list[ObtRecord]:
    """Keep the longest candidate per assigned night (earliest start on ties)."""
    by_night: dict[dt.date, list[Candidate]] = {}
    for c in candidates:
        by_night.setdefault(assign_night(c)[0], []).append(c)
    out = []
    for day in sorted(by_night):
        group = sorted(by_night[day], key=lambda c: (-c.minutes, c.start))
        if len(group) > 1:
            log.debug("subject %s night %s: %d extra candidates discarded", subject_id, day, len(group) - 1)
            if discarded is not None:
                discarded.extend(group[1:])
        out.append(make_record(subject_id, group[0]))
    return out


def summarize_subject(records: list[ObtRecord]) -> SubjectObtSummary:
    """Arithmetic means over the subject's nights, on the linear OBT-M axis."""
    if not records:
        raise NoValidNightsError("no valid OBT nights")
    ids = {r.subject_id for r in records}
    if len(ids) != 1:
        raise ValueError(f"records from several subjects: {sorted(ids)}")
    per_weekday = {}
    for r in sorted(records, key=lambda r: r.start):
        per_weekday.setdefault(r.assigned_weekday, r)
    return SubjectObtSummary(
        subject_id=records[0].subject_id,
        mean_obt_d=fmean(r.obt_d_minutes for r in records),
        mean_obt_m_linear=fmean(r.obt_m_linear for r in records),
        nights_used=len(records),
        per_weekday=per_weekday,
    )


def extract_obts(
    series: EpochSeries,
    intervals: list[NonWearInterval],
    day_records: list[DayRecord],
    assessment: Assessment | None = None,
    min_minutes: int = OBT_MIN_MINUTES,
    max_minutes: int = OBT_MAX_MINUTES,
    rejected: Counter | None = None,
) -> list[ObtRecord]:
    cands = candidate_obts(series, intervals, day_records, assessment, min_minutes, max_minutes, rejected)
    return select_obt_per_night(series.subject_id, cands)
