"""Non-wear interval detection and per-calendar-day validity."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .clock import MINUTES_PER_DAY, weekday_name
from .ingest import EpochSeries

MIN_NONWEAR_MINUTES = 60
MAX_INTERRUPTS = 2
INTERRUPT_CEILING = 100
VALID_DAY_MAX_NONWEAR = 600
ASSESSMENT_DAYS = 7


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NonWearParams:
    min_len: int = MIN_NONWEAR_MINUTES
    max_interrupts: int = MAX_INTERRUPTS
    interrupt_ceiling: int = INTERRUPT_CEILING


@dataclass(frozen=True)
class NonWearInterval:
    start_index: int
    end_index: int  # exclusive
    interrupted_minutes: int = 0

    @property
    def length(self) -> int:
        return self.end_index - self.start_index


@dataclass(frozen=True)
class Assessment:
    """Half-open ``[start, end)`` window of the wear protocol."""

    start: dt.datetime
    end: dt.datetime

    @classmethod
    def for_series(cls, series: EpochSeries, days: int = ASSESSMENT_DAYS) -> "Assessment":
        return cls(series.start, series.start + dt.timedelta(days=days))

    def index_range(self, series: EpochSeries) -> tuple[int, int]:
        """Window bounds as minute offsets into ``series`` (may fall outside it)."""
        lo = (self.start - series.start) // dt.timedelta(minutes=1)
        hi = (self.end - series.start) // dt.timedelta(minutes=1)
        return int(lo), int(hi)


@dataclass(frozen=True)
class DayRecord:
    date: dt.date
    weekday: str
    coverage_minutes: int
    nonwear_minutes: int
    valid: bool


def detect_nonwear(counts, params: NonWearParams | None = None) -> list[NonWearInterval]:
    """Greedy left-to-right non-wear spans.

    A span opens on a zero-count minute and grows over zeros.  Minutes with
    ``0 < count < interrupt_ceiling`` are tolerated up to ``max_interrupts``
    per span; a count at or above the ceiling, or one tolerated minute too
    many, closes the span at its last zero.  Spans shorter than ``min_len``
    are discarded and the search resumes at the earliest start that could
    still yield a different span.

    ``counts`` may be an :class:`EpochSeries` or any integer sequence.
    """
    p = params or NonWearParams()
    c = np.asarray(counts.counts if isinstance(counts, EpochSeries) else counts, dtype=np.int64)
    n = c.size
    zero = c == 0
    hard = c >= p.interrupt_ceiling
    out: list[NonWearInterval] = []
    zeros_at = np.flatnonzero(zero)
    if zeros_at.size == 0:
        return out
    # next zero at or after i
    next_zero = np.full(n + 1, n, dtype=np.int64)
    next_zero[zeros_at] = zeros_at
    next_zero = np.minimum.accumulate(next_zero[::-1])[::-1]

    i = int(next_zero[0])
    while i < n:
        last_zero = i
        tolerated: list[int] = []
        j = i + 1
        broke_hard = False
        while j < n:
            if zero[j]:
                last_zero = j
            elif hard[j]:
                broke_hard = True
                break
            elif len(tolerated) < p.max_interrupts:
                tolerated.append(j)
            else:
                break
            j += 1
        end = last_zero + 1
        if end - i >= p.min_len:
            inside = sum(1 for t in tolerated if t < end)
            out.append(NonWearInterval(i, end, inside))
            i = int(next_zero[end])
        elif j >= n or broke_hard:
            # every later start up to j hits the same stop and is shorter
            i = int(next_zero[j + 1]) if j < n else n
        elif tolerated:
            # a later start can only differ once it drops the first tolerated minute
            i = int(next_zero[tolerated[0] + 1])
        else:
            i = int(next_zero[j + 1])
    return out


def nonwear_mask(n: int, intervals) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    for iv in intervals:
        mask[iv.start_index:iv.end_index] = True
    return mask


def classify_days(
    series: EpochSeries,
    intervals,
    assessment: Assessment | None = None,
    max_nonwear: int = VALID_DAY_MAX_NONWEAR,
) -> list[DayRecord]:
    """One record per calendar date touched by the recording.

    A day is valid when all 1440 minutes were recorded, fewer than
    ``max_nonwear`` of them fall inside non-wear intervals, and the whole
    day lies inside the assessment window.
    """
    assessment = assessment or Assessment.for_series(series)
    if assessment.end <= assessment.start:
        raise ConfigError("assessment window is empty")
    if assessment.end <= series.start or assessment.start >= series.end:
        raise ConfigError(
            f"assessment window {assessment.start}..{assessment.end} does not overlap "
            f"recording {series.start}..{series.end} of subject {series.subject_id}"
        )

    n = len(series)
    mask = nonwear_mask(n, intervals)
    offset = series.start.hour * 60 + series.start.minute
    day_of = (np.arange(n) + offset) // MINUTES_PER_DAY
    n_days = int(day_of[-1]) + 1
    coverage = np.bincount(day_of, minlength=n_days)
    nonwear = np.bincount(day_of, weights=mask, minlength=n_days).astype(np.int64)

    first = series.start.date()
    out = []
    for k in range(n_days):
        date = first + dt.timedelta(days=k)
        day_start = dt.datetime.combine(date, dt.time())
        in_window = assessment.start <= day_start and day_start + dt.timedelta(days=1) <= assessment.end
        full = coverage[k] == MINUTES_PER_DAY
        out.append(DayRecord(
            date=date,
            weekday=weekday_name(date),
            coverage_minutes=int(coverage[k]),
            nonwear_minutes=int(nonwear[k]),
            valid=bool(full and nonwear[k] < max_nonwear and in_window),
        ))
    return out
