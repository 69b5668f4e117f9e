"""Synthetic cohorts with planted in-bed intervals.

Every subject wears the device for seven days from midnight.  In-bed
intervals are zero-count runs (the device is taken off at bedtime); all other
minutes carry positive counts, apart from optional short removal bouts
(bathing, swimming).  The ground-truth table lists every planted interval so
an extraction can be checked night by night.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .clock import weekday_name
from .ingest import AGE_GROUP_LABELS, AGE_GROUPS, EpochSeries, epochs_frame

# Loosely follows the reference-weekday pattern of US survey data: later
# midpoints around age 20, longer time in bed in children and older adults.
DEFAULT_CHRONOTYPE = dict(zip(AGE_GROUP_LABELS, (145, 160, 232, 187, 173, 170, 154, 167, 166, 176, 174, 175, 175)))
DEFAULT_TIB = dict(zip(AGE_GROUP_LABELS, (560, 540, 530, 525, 525, 515, 510, 505, 505, 520, 535, 545, 545)))

START_ANCHOR = dt.date(2005, 1, 2)  # a Sunday
RECORDING_DAYS = 7


@dataclass
class SynthSpec:
    n_subjects: int = 200
    chronotype_mean: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_CHRONOTYPE))
    chronotype_sd: float = 30.0
    tib_mean: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TIB))
    tib_sd: float = 25.0
    night_sd: float = 15.0
    removal_prob: float = 1.0
    swim_rate: float = 0.0  # removal bouts per day
    swim_minutes: float = 30.0
    weekend_delay: dict[str, float] = field(default_factory=dict)
    self_report_gap: float = 120.0
    male_fraction: float = 0.5

    def __post_init__(self):
        for name in ("chronotype_sd", "tib_sd", "night_sd", "swim_rate", "swim_minutes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("removal_prob", "male_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.n_subjects < 0:
            raise ValueError("n_subjects must be >= 0")
        unknown = set(self.weekend_delay) - set(weekday_name(START_ANCHOR + dt.timedelta(days=k)) for k in range(7))
        if unknown:
            raise ValueError(f"unknown weekdays in weekend_delay: {sorted(unknown)}")


@dataclass
class SynthCohort:
    series: list[EpochSeries]
    demographics: pd.DataFrame
    questionnaire: pd.DataFrame
    truth: pd.DataFrame

    def epochs(self) -> pd.DataFrame:
        return epochs_frame(self.series)

    def write(self, outdir) -> dict[str, str]:
        import os

        os.makedirs(outdir, exist_ok=True)
        paths = {
            "epochs": os.path.join(outdir, "epochs.csv"),
            "demographics": os.path.join(outdir, "demographics.csv"),
            "questionnaire": os.path.join(outdir, "questionnaire.csv"),
            "truth": os.path.join(outdir, "truth.csv"),
        }
        self.epochs().to_csv(paths["epochs"], index=False, lineterminator="\n")
        self.demographics.to_csv(paths["demographics"], index=False, lineterminator="\n")
        self.questionnaire.to_csv(paths["questionnaire"], index=False, lineterminator="\n")
        self.truth.to_csv(paths["truth"], index=False, lineterminator="\n")
        return paths


def _wear_counts(rng, n):
    # positive throughout; roughly 5% of minutes fall in the 1-99 band
    low = rng.random(n) < 0.05
    return np.where(low, rng.integers(1, 100, n), rng.integers(100, 4000, n))


def synth_cohort(spec: SynthSpec, seed: int = 0) -> SynthCohort:
    rng = np.random.default_rng(seed)
    n_min = RECORDING_DAYS * 1440
    width = len(str(max(spec.n_subjects, 1)))
    series, demo, quest, truth = [], [], [], []

    for k in range(spec.n_subjects):
        sid = f"S{k + 1:0{width}d}"
        g = int(rng.integers(len(AGE_GROUPS)))
        label = AGE_GROUP_LABELS[g]
        lo, hi = AGE_GROUPS[g]
        age = int(rng.integers(lo, hi + 1))
        male = bool(rng.random() < spec.male_fraction)
        weight = float(np.round(rng.lognormal(np.log(10000), 0.5), 2))
        stratum = int(rng.integers(1, 16))
        psu = int(rng.integers(1, 3))
        start_day = START_ANCHOR + dt.timedelta(days=int(rng.integers(7)))
        start = dt.datetime.combine(start_day, dt.time())

        chrono = spec.chronotype_mean[label] + spec.chronotype_sd * rng.standard_normal()
        tib = spec.tib_mean[label] + spec.tib_sd * rng.standard_normal()

        counts = _wear_counts(rng, n_min)
        prev_end = -10**9
        nights = []
        for d in range(-1, RECORDING_DAYS):
            night = start_day + dt.timedelta(days=d)
            wd = weekday_name(night)
            midnight = (d + 1) * 1440
            mid = midnight + chrono + spec.weekend_delay.get(wd, 0.0) + spec.night_sd * rng.standard_normal()
            dur = max(30.0, tib + spec.night_sd * rng.standard_normal())
            s = int(round(mid - dur / 2))
            e = s + int(round(dur))
            s = max(s, prev_end + 120)
            if e - s < 30:
                continue
            removed = bool(rng.random() < spec.removal_prob)
            a, b = max(s, 0), min(e, n_min)
            if a < b:
                if removed:
                    counts[a:b] = 0
                else:
                    # device left on in bed: mostly still, with movement every few minutes
                    quiet = np.zeros(b - a, dtype=np.int64)
                    moves = rng.random(b - a) < 0.08
                    quiet[moves] = rng.integers(1, 400, int(moves.sum()))
                    counts[a:b] = quiet
            nights.append((s, e))
            truth.append({
                "SEQN": sid, "kind": "night", "night_date": night.isoformat(), "weekday": wd,
                "start_index": s, "end_index": e,
                "start": (start + dt.timedelta(minutes=s)).isoformat(),
                "end": (start + dt.timedelta(minutes=e)).isoformat(),
                "obt_d_minutes": e - s, "obt_m_linear": (s + e) / 2 - midnight, "removed": removed,
            })
            prev_end = e

        if spec.swim_rate > 0:
            n_bouts = int(rng.poisson(spec.swim_rate * RECORDING_DAYS))
            for _ in range(n_bouts):
                length = max(1, int(round(rng.exponential(spec.swim_minutes))))
                s = int(rng.integers(0, max(1, n_min - length)))
                e = s + length
                if any(s < ne + 30 and e > ns - 30 for ns, ne in nights):
                    continue
                counts[s:e] = 0
                truth.append({
                    "SEQN": sid, "kind": "removal", "night_date": "", "weekday": "",
                    "start_index": s, "end_index": e,
                    "start": (start + dt.timedelta(minutes=s)).isoformat(),
                    "end": (start + dt.timedelta(minutes=e)).isoformat(),
                    "obt_d_minutes": e - s, "obt_m_linear": float("nan"), "removed": True,
                })

        series.append(EpochSeries(sid, start, counts))
        demo.append({"SEQN": sid, "RIDAGEYR": age, "RIAGENDR": 1 if male else 2, "WTMEC2YR": weight,
                     "SDMVSTRA": stratum, "SDMVPSU": psu})
        if age >= 16:
            hours = int(np.clip(round((tib - spec.self_report_gap) / 60), 1, 12))
            onset = int(np.clip(round(rng.gamma(2.0, 8.0)), 0, 60))
            quest.append({"SEQN": sid, "SLD010H": hours, "SLD020M": onset})

    truth_cols = ["SEQN", "kind", "night_date", "weekday", "start_index", "end_index", "start", "end",
                  "obt_d_minutes", "obt_m_linear", "removed"]
    return SynthCohort(
        series=series,
        demographics=pd.DataFrame(demo, columns=["SEQN", "RIDAGEYR", "RIAGENDR", "WTMEC2YR", "SDMVSTRA", "SDMVPSU"]),
        questionnaire=pd.DataFrame(quest, columns=["SEQN", "SLD010H", "SLD020M"]),
        truth=pd.DataFrame(truth, columns=truth_cols),
    )


def truth_recovery(truth: pd.DataFrame, records, valid_day_max_nonwear: int = 600,
                   min_nonwear: int = 60) -> pd.DataFrame:
    """Match planted nights against extracted OBT records.

    A planted night is ``eligible`` when the device was removed, the night
    lies strictly inside the recording (a night cut by either end has no wear
    on one side) and the calendar day it starts on carries fewer planted
    off-device minutes than ``valid_day_max_nonwear``.  Only removals still
    at least ``min_nonwear`` long after clipping to the recording count as
    off-device time, since shorter zero runs are never non-wear.
    Eligibility uses the planted intervals only, so it is an oracle for the
    extraction.
    ``recovered`` is true when a record has exactly the planted start and end.
    """
    n_min = RECORDING_DAYS * 1440
    off = {}
    for r in truth[truth["removed"].astype(bool)].itertuples(index=False):
        a, b = max(int(r.start_index), 0), min(int(r.end_index), n_min)
        if b - a < min_nonwear:
            continue
        per_day = off.setdefault(r.SEQN, np.zeros(RECORDING_DAYS, dtype=int))
        for d in range(a // 1440, (b - 1) // 1440 + 1):
            per_day[d] += min(b, (d + 1) * 1440) - max(a, d * 1440)

    nights = truth[(truth["kind"] == "night") & truth["removed"].astype(bool)
                   & (truth["start_index"] > 0) & (truth["end_index"] < n_min)]
    out = nights[["SEQN", "night_date", "weekday", "start", "end", "obt_d_minutes", "obt_m_linear"]].copy()
    out["eligible"] = [off[sid][int(s) // 1440] < valid_day_max_nonwear
                       for sid, s in zip(nights["SEQN"], nights["start_index"])]
    found = {(r.subject_id, r.start.isoformat(), r.end.isoformat()) for r in records}
    out["recovered"] = [(s, a, b) in found for s, a, b in zip(out["SEQN"], out["start"], out["end"])]
    return out.reset_index(drop=True)
