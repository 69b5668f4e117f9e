"""Survey-weighted descriptive statistics and the day-of-week models.

Each weekday/outcome model regresses the nightly value on sex, age group and
their interaction, with females aged 17-22 as the reference cell::

    y = g_F + g_M*male + sum_l a_l*[group l] + sum_l ga_l*[group l]*male

The design is saturated, so every fitted cell value is that cell's weighted
mean.  Standard errors come from a Taylor-linearised (sandwich) estimator
over strata and PSUs when those are available, otherwise from the
heteroskedasticity-robust weighted sandwich.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .clock import WEEKDAYS, format_clock, format_hm
from .ingest import AGE_GROUP_LABELS, REFERENCE_GROUP, SubjectProfile
from .obt import ObtRecord, SubjectObtSummary

log = logging.getLogger(__name__)

ALPHA = 0.05
OUTCOMES = ("OBT-D", "OBT-M")
REF_INDEX = AGE_GROUP_LABELS.index(REFERENCE_GROUP)


class ModelError(ValueError):
    pass


def weighted_quantile(values, weights, p: float) -> float:
    """Inverse of the normalised weighted empirical CDF.

    Returns the smallest value whose cumulative weight share reaches ``p``;
    when the share hits ``p`` exactly (a flat step of the inverse) the two
    adjacent order statistics are averaged.  With unit weights this is the
    ordinary sample median for ``p = 0.5``.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.size == 0:
        raise ValueError("weighted_quantile of empty input")
    if x.shape != w.shape:
        raise ValueError("values and weights differ in shape")
    if not (w > 0).all():
        raise ValueError("weights must be positive")
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cdf = np.cumsum(w) / w.sum()
    k = int(np.searchsorted(cdf, p - 1e-12, side="left"))
    k = min(k, x.size - 1)
    if abs(cdf[k] - p) <= 1e-12 and k + 1 < x.size:
        return float((x[k] + x[k + 1]) / 2)
    return float(x[k])


def weighted_median(values, weights) -> float:
    return weighted_quantile(values, weights, 0.5)


# ---------------------------------------------------------------------------
# day-of-week models

@dataclass
class DesignFrame:
    y: np.ndarray
    male: np.ndarray
    group: np.ndarray  # age-group index 0..12
    weight: np.ndarray
    stratum: np.ndarray | None = None
    psu: np.ndarray | None = None
    outcome_kind: str = "OBT-D"
    weekday: str = ""
    subject_ids: list[str] | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.male = np.asarray(self.male, dtype=bool)
        self.group = np.asarray(self.group, dtype=int)
        self.weight = np.asarray(self.weight, dtype=float)
        n = self.y.size
        if not (self.male.size == self.group.size == self.weight.size == n):
            raise ValueError("design columns differ in length")
        if n and not (self.weight > 0).all():
            raise ValueError("weights must be positive")
        for name in ("stratum", "psu"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v))

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def has_design(self) -> bool:
        return self.stratum is not None and self.psu is not None


def build_design_frames(
    profiles: Mapping[str, SubjectProfile],
    records: Iterable[ObtRecord],
    outcome: str,
) -> dict[str, DesignFrame]:
    """One frame per weekday; a subject's chronologically first night per weekday."""
    if outcome not in OUTCOMES:
        raise ValueError(f"unknown outcome {outcome!r}")
    first: dict[tuple[str, str], ObtRecord] = {}
    for r in sorted(records, key=lambda r: (r.subject_id, r.start)):
        first.setdefault((r.subject_id, r.assigned_weekday), r)

    rows: dict[str, list[tuple[str, ObtRecord]]] = {d: [] for d in WEEKDAYS}
    for (sid, day), r in sorted(first.items()):
        if sid in profiles:
            rows[day].append((sid, r))

    frames = {}
    for day, items in rows.items():
        ps = [profiles[sid] for sid, _ in items]
        use_design = bool(ps) and all(p.stratum is not None and p.psu is not None for p in ps)
        frames[day] = DesignFrame(
            y=[r.obt_d_minutes if outcome == "OBT-D" else r.obt_m_linear for _, r in items],
            male=[p.is_male for p in ps],
            group=[p.group_index for p in ps],
            weight=[p.exam_weight for p in ps],
            stratum=[p.stratum for p in ps] if use_design else None,
            psu=[p.psu for p in ps] if use_design else None,
            outcome_kind=outcome,
            weekday=day,
            subject_ids=[sid for sid, _ in items],
        )
    return frames


@dataclass
class DayModelFit:
    weekday: str
    outcome_kind: str
    names: list[str]
    params: np.ndarray
    cov: np.ndarray
    df: float
    n_rows: int
    variance_method: str
    groups: list[int] = field(default_factory=list)

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.names, self.params.tolist()))

    @property
    def standard_errors(self) -> dict[str, float]:
        return dict(zip(self.names, np.sqrt(np.clip(np.diag(self.cov), 0, None)).tolist()))

    @property
    def p_values(self) -> dict[str, float]:
        out = {}
        for name, b, se in zip(self.names, self.params, np.sqrt(np.clip(np.diag(self.cov), 0, None))):
            if se > 0:
                out[name] = float(2 * stats.t.sf(abs(b / se), self.df))
            else:
                out[name] = float("nan")
        return out

    def significant(self, alpha: float = ALPHA) -> dict[str, bool]:
        return {k: bool(v <= alpha) for k, v in self.p_values.items()}

    def _terms(self, sex: str, group: str) -> list[str]:
        terms = ["g_F"]
        if sex == "male":
            terms.append("g_M")
        if group != REFERENCE_GROUP:
            terms.append(f"a_{group}")
            if sex == "male":
                terms.append(f"ga_{group}")
        missing = [t for t in terms if t not in self.names]
        if missing:
            raise KeyError(f"cell {sex} {group} not in model ({', '.join(missing)})")
        return terms

    def cell_value(self, sex: str, group: str) -> float:
        """Fitted value of a cell as the plain sum of its coefficient terms."""
        coef = self.coefficients
        return float(sum(coef[t] for t in self._terms(sex, group)))

    def cell_se(self, sex: str, group: str) -> float:
        c = np.zeros(len(self.names))
        for t in self._terms(sex, group):
            c[self.names.index(t)] = 1.0
        return float(np.sqrt(max(c @ self.cov @ c, 0.0)))


def design_matrix(male: np.ndarray, group: np.ndarray, groups: Sequence[int]) -> tuple[np.ndarray, list[str]]:
    others = [g for g in groups if g != REF_INDEX]
    names = ["g_F", "g_M"] + [f"a_{AGE_GROUP_LABELS[g]}" for g in others] + [f"ga_{AGE_GROUP_LABELS[g]}" for g in others]
    n = male.size
    X = np.zeros((n, len(names)))
    X[:, 0] = 1.0
    X[:, 1] = male
    for k, g in enumerate(others):
        ind = group == g
        X[:, 2 + k] = ind
        X[:, 2 + len(others) + k] = ind & male
    return X, names


def _meat(scores: np.ndarray, frame: DesignFrame) -> tuple[np.ndarray, float, str]:
    p = scores.shape[1]
    if frame.has_design:
        strata = np.asarray(frame.stratum)
        psus = np.asarray(frame.psu)
        meat = np.zeros((p, p))
        n_psu = 0
        n_strata = 0
        for h in np.unique(strata):
            in_h = strata == h
            ids = psus[in_h]
            labels = np.unique(ids)
            n_strata += 1
            n_psu += labels.size
            if labels.size < 2:
                # single-PSU stratum contributes no between-PSU variance
                continue
            totals = np.array([scores[in_h][ids == j].sum(axis=0) for j in labels])
            centered = totals - totals.mean(axis=0)
            meat += labels.size / (labels.size - 1) * centered.T @ centered
        df = max(n_psu - n_strata, 1)
        return meat, float(df), "taylor-linearized"
    n = scores.shape[0]
    centered = scores - scores.mean(axis=0)
    factor = n / (n - 1) if n > 1 else 0.0
    return factor * centered.T @ centered, float(max(n - p, 1)), "weight-robust"


def fit_day_model(frame: DesignFrame) -> DayModelFit:
    """Weighted least squares on the saturated sex x age-group design.

    Coefficients follow the reference coding (females 17-22 carry only
    ``g_F``); fitted cell values are the weighted cell means.
    """
    if len(frame) == 0:
        raise ModelError(f"{frame.outcome_kind} {frame.weekday}: no rows")
    groups = sorted(set(frame.group.tolist()))
    if REF_INDEX not in groups:
        raise ModelError(f"{frame.outcome_kind} {frame.weekday}: empty cell female {REFERENCE_GROUP}")
    for g in groups:
        in_g = frame.group == g
        for sex, sel in (("female", ~frame.male), ("male", frame.male)):
            if not (in_g & sel).any():
                raise ModelError(f"{frame.outcome_kind} {frame.weekday}: empty cell {sex} {AGE_GROUP_LABELS[g]}")

    # The design is saturated, so the WLS solution is a fixed integer map T
    # from weighted cell means to coefficients, and each row's influence on
    # the coefficients is T[:, cell] * w * resid / W_cell (the sandwich's
    # bread times score, without inverting X'WX).
    cells = [(g, male) for g in groups for male in (False, True)]
    Xc, names = design_matrix(np.array([m for _, m in cells]), np.array([g for g, _ in cells]), groups)
    T = np.rint(np.linalg.inv(Xc))
    w = frame.weight
    cell_of = np.empty(len(frame), dtype=int)
    means = np.empty(len(cells))
    totals = np.empty(len(cells))
    for k, (g, male) in enumerate(cells):
        sel = (frame.group == g) & (frame.male == male)
        cell_of[sel] = k
        means[k] = np.average(frame.y[sel], weights=w[sel])
        totals[k] = w[sel].sum()
    beta = T @ means
    resid = frame.y - means[cell_of]
    influence = T[:, cell_of].T * (w * resid / totals[cell_of])[:, None]
    cov, df, method = _meat(influence, frame)
    return DayModelFit(frame.weekday, frame.outcome_kind, names, beta, cov, df, len(frame), method, groups)


def fit_all_day_models(profiles, records, outcomes=OUTCOMES) -> dict[tuple[str, str], DayModelFit]:
    fits = {}
    for outcome in outcomes:
        for day, frame in build_design_frames(profiles, records, outcome).items():
            if len(frame) == 0:
                continue
            fits[(outcome, day)] = fit_day_model(frame)
    return fits


def render_value(outcome: str, minutes: float) -> str:
    return format_hm(minutes) if outcome == "OBT-D" else format_clock(minutes)


def coefficient_table(fits: Iterable[DayModelFit], alpha: float = ALPHA) -> pd.DataFrame:
    """Long table of coefficients (Tables 2 and 4 layout, one row per term)."""
    rows = []
    for fit in fits:
        se = fit.standard_errors
        pv = fit.p_values
        for name, b in fit.coefficients.items():
            shown = render_value(fit.outcome_kind, b) if name == "g_F" else format_hm(b)
            rows.append({
                "outcome": fit.outcome_kind,
                "weekday": fit.weekday,
                "term": name,
                "estimate_min": b,
                "se_min": se[name],
                "p_value": pv[name],
                "significant": bool(pv[name] <= alpha),
                "rendered": shown,
                "variance_method": fit.variance_method,
            })
    return pd.DataFrame(rows, columns=["outcome", "weekday", "term", "estimate_min", "se_min", "p_value",
                                       "significant", "rendered", "variance_method"])


def fitted_value_tables(fits: Iterable[DayModelFit]) -> pd.DataFrame:
    """Fitted cell values (Tables 3 and 5 layout) with standard errors."""
    rows = []
    for fit in fits:
        for g in fit.groups:
            label = AGE_GROUP_LABELS[g]
            for sex in ("female", "male"):
                v = fit.cell_value(sex, label)
                se = fit.cell_se(sex, label)
                rows.append({
                    "outcome": fit.outcome_kind,
                    "weekday": fit.weekday,
                    "sex": sex,
                    "age_group": label,
                    "value_min": v,
                    "se_min": se,
                    "rendered": f"{render_value(fit.outcome_kind, v)}({int(round(se)):02d})",
                })
    return pd.DataFrame(rows, columns=["outcome", "weekday", "sex", "age_group", "value_min", "se_min", "rendered"])


# ---------------------------------------------------------------------------
# descriptive tables

def demographic_table(profiles: Iterable[SubjectProfile]) -> pd.DataFrame:
    """Weighted sex and race shares (percent) per age group plus overall."""
    ps = list(profiles)
    races = sorted({p.race for p in ps if p.race})
    cols = list(AGE_GROUP_LABELS) + ["Overall"]
    rows = {"n": [], "Sex: Male (%)": []}
    for r in races:
        rows[f"Race {r} (%)"] = []
    if races:
        rows["Race Missing (%)"] = []
    for col in cols:
        sub = ps if col == "Overall" else [p for p in ps if p.age_group == col]
        w = np.array([p.exam_weight for p in sub])
        total = w.sum()
        rows["n"].append(len(sub))

        def share(pred):
            if total == 0:
                return float("nan")
            return 100.0 * sum(p.exam_weight for p in sub if pred(p)) / total

        rows["Sex: Male (%)"].append(share(lambda p: p.is_male))
        for r in races:
            rows[f"Race {r} (%)"].append(share(lambda p, r=r: p.race == r))
        if races:
            rows["Race Missing (%)"].append(share(lambda p: not p.race))
    return pd.DataFrame(rows, index=cols).T


@dataclass
class ParticipationTable:
    counts: pd.DataFrame
    female_pct: pd.DataFrame

    def render(self) -> pd.DataFrame:
        out = self.counts.astype(object).copy()
        for r in self.counts.index:
            for c in self.counts.columns:
                n = int(self.counts.loc[r, c])
                pct = self.female_pct.loc[r, c]
                out.loc[r, c] = f"{n} ({pct:.0f}%)" if n else "0"
        return out


def participation_table(profiles: Mapping[str, SubjectProfile], records: Iterable[ObtRecord]) -> ParticipationTable:
    """Valid nights per age group x weekday with percentage of females."""
    cols = list(AGE_GROUP_LABELS) + ["All"]
    idx = list(WEEKDAYS) + ["Total", "Subjects"]
    counts = pd.DataFrame(0, index=idx, columns=cols, dtype=np.int64)
    females = pd.DataFrame(0, index=idx, columns=cols, dtype=np.int64)
    subjects = set()
    for r in records:
        p = profiles.get(r.subject_id)
        if p is None:
            continue
        f = 0 if p.is_male else 1
        for c in (p.age_group, "All"):
            for row in (r.assigned_weekday, "Total"):
                counts.loc[row, c] += 1
                females.loc[row, c] += f
        subjects.add(r.subject_id)
    for sid in subjects:
        p = profiles[sid]
        f = 0 if p.is_male else 1
        for c in (p.age_group, "All"):
            counts.loc["Subjects", c] += 1
            females.loc["Subjects", c] += f
    with np.errstate(invalid="ignore", divide="ignore"):
        pct = 100.0 * females / counts.where(counts > 0)
    return ParticipationTable(counts, pct)


def self_report_comparison(
    profiles: Mapping[str, SubjectProfile],
    summaries: Mapping[str, SubjectObtSummary],
    min_age: int = 16,
) -> pd.DataFrame:
    """Weighted medians of self-reported sleep, onset latency and mean OBT-D.

    Restricted to subjects aged ``min_age`` or older who have both a
    self-report and at least one valid night.  Rows per sex x age group,
    followed by per-sex and overall rows; empty bins carry NaN.
    """
    eligible = [
        (profiles[sid], summaries[sid]) for sid in sorted(summaries)
        if sid in profiles and profiles[sid].age_years >= min_age
        and profiles[sid].self_report is not None
    ]

    def summarize(items, sex, group):
        def med(pairs):
            if not pairs:
                return float("nan")
            v, w = zip(*pairs)
            return weighted_median(v, w)

        sleep = [(p.self_report.sleep_hours * 60, p.exam_weight) for p, _ in items if p.self_report.sleep_hours is not None]
        onset = [(p.self_report.onset_minutes, p.exam_weight) for p, _ in items if p.self_report.onset_minutes is not None]
        obt = [(s.mean_obt_d, p.exam_weight) for p, s in items]
        m_sleep, m_obt = med(sleep), med(obt)
        return {
            "sex": sex,
            "age_group": group,
            "n": len(items),
            "median_self_report_sleep_min": m_sleep,
            "median_self_report_onset_min": med(onset),
            "median_obt_d_min": m_obt,
            "gap_min": m_obt - m_sleep,
        }

    rows = []
    for sex in ("female", "male"):
        for g in AGE_GROUP_LABELS:
            rows.append(summarize([(p, s) for p, s in eligible if p.sex == sex and p.age_group == g], sex, g))
    for sex in ("female", "male"):
        rows.append(summarize([(p, s) for p, s in eligible if p.sex == sex], sex, "all"))
    rows.append(summarize(eligible, "all", "all"))
    return pd.DataFrame(rows)
