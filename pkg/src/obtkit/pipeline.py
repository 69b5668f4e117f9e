"""End-to-end batch pipeline: ingest -> non-wear -> OBT -> models, curves, tables.

Every stage turns plain data into pandas frames; :class:`Outputs` collects
them and writes the directory in one step, so a failed run leaves nothing
behind.  Stage CSVs can be read back (``read_*``) to resume a pipeline from
any intermediate stage.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import shutil
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .clock import WEEKDAYS, format_clock
from .config import PipelineConfig
from .ingest import (
    AGE_GROUP_LABELS, REFERENCE_GROUP, Cohort, EpochSeries, Exclusion, RecordingSpan, SelfReport,
    SubjectProfile, join_cohort, parse_demographics, parse_epochs, parse_sleep_questionnaire,
)
from .lms import LmsError, PercentileCurveSet, fit_lms
from .nonwear import Assessment, DayRecord, NonWearInterval, classify_days, detect_nonwear
from .obt import ObtRecord, SubjectObtSummary, candidate_obts, select_obt_per_night, summarize_subject
from .survey import (
    OUTCOMES, DayModelFit, ModelError, build_design_frames, coefficient_table, demographic_table,
    fit_day_model, fitted_value_tables, participation_table, self_report_comparison,
)

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
WEEKEND_NIGHTS = ("Fri", "Sat")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str, subject: str | None = None):
        self.stage = stage
        self.subject = subject
        where = f" (subject {subject})" if subject else ""
        super().__init__(f"[{stage}]{where} {message}")


class Outputs:
    """Files of one run, held in memory until :meth:`commit`."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def csv(self, name: str, frame: pd.DataFrame):
        self.files[name] = frame.to_csv(index=False, lineterminator="\n", float_format=FLOAT_FORMAT)

    def text(self, name: str, text: str):
        self.files[name] = text

    def commit(self, outdir) -> list[Path]:
        outdir = Path(outdir)
        outdir.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{outdir.name}.", dir=outdir.parent))
        try:
            for name, text in self.files.items():
                path = tmp / name
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(text, encoding="utf-8", newline="\n")
            outdir.mkdir(exist_ok=True)
            written = []
            for name in sorted(self.files):
                dest = outdir / name
                dest.parent.mkdir(parents=True, exist_ok=True)
                os.replace(tmp / name, dest)
                written.append(dest)
            return written
        finally:
            shutil.rmtree(tmp, ignore_errors=True)


class ExclusionLog:
    """First exclusion reason per subject, plus per-stage conservation lines."""

    def __init__(self):
        self.by_subject: dict[str, Exclusion] = {}
        self.lines: list[str] = []

    def exclude(self, sid: str, stage: str, reason: str):
        self.by_subject.setdefault(sid, Exclusion(sid, stage, reason))

    def account(self, stage: str, ids_in, retained) -> None:
        ids_in, retained = set(ids_in), set(retained)
        dropped = ids_in - retained
        reasons = Counter(self.by_subject[s].reason for s in dropped if s in self.by_subject)
        unexplained = len(dropped) - sum(reasons.values())
        if unexplained:
            raise PipelineError(stage, f"{unexplained} subjects dropped without a recorded reason")
        parts = ", ".join(f"{r}={n}" for r, n in sorted(reasons.items())) or "none"
        assert len(ids_in) == len(retained) + sum(reasons.values())
        self.lines.append(f"[{stage}] subjects in={len(ids_in)} retained={len(retained)} excluded: {parts}")

    def frame(self) -> pd.DataFrame:
        rows = [e._asdict() for _, e in sorted(self.by_subject.items())]
        return pd.DataFrame(rows, columns=["subject_id", "stage", "reason"]).rename(columns={"subject_id": "SEQN"})


# ---------------------------------------------------------------------------
# frames <-> records

def subjects_frame(profiles) -> pd.DataFrame:
    rows = []
    for p in sorted(profiles, key=lambda p: p.subject_id):
        sr = p.self_report or SelfReport()
        rows.append({
            "SEQN": p.subject_id, "age": p.age_years, "sex": p.sex, "age_group": p.age_group,
            "weight": p.exam_weight, "stratum": p.stratum, "psu": p.psu, "race": p.race,
            "sleep_hours": sr.sleep_hours, "onset_minutes": sr.onset_minutes,
        })
    cols = ["SEQN", "age", "sex", "age_group", "weight", "stratum", "psu", "race", "sleep_hours", "onset_minutes"]
    return pd.DataFrame(rows, columns=cols).astype({"stratum": "Int64", "psu": "Int64",
                                                    "sleep_hours": "Int64", "onset_minutes": "Int64"})


def read_subjects(path) -> dict[str, SubjectProfile]:
    frame = pd.read_csv(path, dtype={"SEQN": str, "race": str}, keep_default_na=True)
    out = {}
    for r in frame.itertuples(index=False):
        def opt(v):
            return None if pd.isna(v) else int(v)
        hours, onset = opt(r.sleep_hours), opt(r.onset_minutes)
        sr = SelfReport(hours, onset) if hours is not None or onset is not None else None
        out[r.SEQN] = SubjectProfile(r.SEQN, int(r.age), r.sex, r.age_group, float(r.weight),
                                     opt(r.stratum), opt(r.psu), sr, None if pd.isna(r.race) else r.race)
    return out


def obt_frame(records) -> pd.DataFrame:
    rows = [{
        "SEQN": r.subject_id, "assigned_date": r.assigned_date.isoformat(), "weekday": r.assigned_weekday,
        "start": r.start.isoformat(), "end": r.end.isoformat(), "obt_d_minutes": r.obt_d_minutes,
        "obt_m_linear": r.obt_m_linear, "obt_m_clock": r.obt_m_clock,
    } for r in records]
    return pd.DataFrame(rows, columns=["SEQN", "assigned_date", "weekday", "start", "end", "obt_d_minutes",
                                       "obt_m_linear", "obt_m_clock"])


def read_obt(path) -> list[ObtRecord]:
    frame = pd.read_csv(path, dtype={"SEQN": str})
    return [ObtRecord(r.SEQN, dt.datetime.fromisoformat(r.start), dt.datetime.fromisoformat(r.end),
                      dt.date.fromisoformat(r.assigned_date), r.weekday, int(r.obt_d_minutes), float(r.obt_m_linear))
            for r in frame.itertuples(index=False)]


def summary_frame(summaries) -> pd.DataFrame:
    rows = []
    for sid in sorted(summaries):
        s = summaries[sid]
        row = {"SEQN": sid, "nights_used": s.nights_used, "mean_obt_d": s.mean_obt_d,
               "mean_obt_m_linear": s.mean_obt_m_linear, "mean_obt_m_clock": s.mean_obt_m_clock}
        for d in WEEKDAYS:
            r = s.per_weekday.get(d)
            row[f"obt_d_{d}"] = r.obt_d_minutes if r else None
            row[f"obt_m_{d}"] = r.obt_m_linear if r else None
        rows.append(row)
    cols = ["SEQN", "nights_used", "mean_obt_d", "mean_obt_m_linear", "mean_obt_m_clock"]
    cols += [f"obt_d_{d}" for d in WEEKDAYS] + [f"obt_m_{d}" for d in WEEKDAYS]
    return pd.DataFrame(rows, columns=cols)


@dataclass
class SubjectNonwear:
    span: RecordingSpan
    assessment: Assessment
    intervals: list[NonWearInterval]
    days: list[DayRecord]


def nonwear_frames(results: dict[str, SubjectNonwear]) -> dict[str, pd.DataFrame]:
    iv_rows, day_rows, rec_rows = [], [], []
    for sid in sorted(results):
        r = results[sid]
        rec_rows.append({"SEQN": sid, "start": r.span.start.isoformat(), "n_minutes": len(r.span),
                         "assessment_start": r.assessment.start.isoformat(),
                         "assessment_end": r.assessment.end.isoformat()})
        for iv in r.intervals:
            iv_rows.append({"SEQN": sid, "start_index": iv.start_index, "end_index": iv.end_index,
                            "start": r.span.instant(iv.start_index).isoformat(),
                            "end": r.span.instant(iv.end_index).isoformat(),
                            "minutes": iv.length, "interrupted_minutes": iv.interrupted_minutes})
        for d in r.days:
            day_rows.append({"SEQN": sid, "date": d.date.isoformat(), "weekday": d.weekday,
                             "coverage_minutes": d.coverage_minutes, "nonwear_minutes": d.nonwear_minutes,
                             "valid": int(d.valid)})
    return {
        "recordings.csv": pd.DataFrame(rec_rows, columns=["SEQN", "start", "n_minutes", "assessment_start",
                                                          "assessment_end"]),
        "intervals.csv": pd.DataFrame(iv_rows, columns=["SEQN", "start_index", "end_index", "start", "end",
                                                        "minutes", "interrupted_minutes"]),
        "days.csv": pd.DataFrame(day_rows, columns=["SEQN", "date", "weekday", "coverage_minutes",
                                                    "nonwear_minutes", "valid"]),
    }


def read_nonwear(workdir) -> dict[str, SubjectNonwear]:
    workdir = Path(workdir)
    recs = pd.read_csv(workdir / "recordings.csv", dtype={"SEQN": str})
    ivs = pd.read_csv(workdir / "intervals.csv", dtype={"SEQN": str})
    days = pd.read_csv(workdir / "days.csv", dtype={"SEQN": str})
    out = {}
    for r in recs.itertuples(index=False):
        span = RecordingSpan(r.SEQN, dt.datetime.fromisoformat(r.start), int(r.n_minutes))
        ass = Assessment(dt.datetime.fromisoformat(r.assessment_start), dt.datetime.fromisoformat(r.assessment_end))
        out[r.SEQN] = SubjectNonwear(span, ass, [], [])
    for r in ivs.itertuples(index=False):
        out[r.SEQN].intervals.append(NonWearInterval(int(r.start_index), int(r.end_index), int(r.interrupted_minutes)))
    for r in days.itertuples(index=False):
        out[r.SEQN].days.append(DayRecord(dt.date.fromisoformat(r.date), r.weekday, int(r.coverage_minutes),
                                          int(r.nonwear_minutes), bool(r.valid)))
    return out


# ---------------------------------------------------------------------------
# stages

def stage_ingest(cfg: PipelineConfig, xlog: ExclusionLog) -> Cohort:
    stage = "ingest"
    if not cfg.epochs or not cfg.demographics:
        raise PipelineError(stage, "both epochs and demographics inputs are required")
    excluded: list[Exclusion] = []
    try:
        profiles = parse_demographics(cfg.demographics, excluded)
        series = parse_epochs(cfg.epochs, excluded)
        reports = parse_sleep_questionnaire(cfg.questionnaire) if cfg.questionnaire else {}
    except (ValueError, OSError) as exc:
        raise PipelineError(stage, str(exc)) from exc
    cohort = join_cohort(profiles, series, reports, cfg.weight_scheme)
    for e in excluded + cohort.exclusions:
        xlog.exclude(e.subject_id, stage, e.reason)
    universe = {p.subject_id for p in profiles} | {s.subject_id for s in series} | {e.subject_id for e in excluded}
    xlog.account(stage, universe, cohort.subjects)
    return cohort


def stage_nonwear(series: dict[str, EpochSeries], cfg: PipelineConfig, xlog: ExclusionLog) -> dict[str, SubjectNonwear]:
    out = {}
    for sid in sorted(series):
        s = series[sid]
        try:
            intervals = detect_nonwear(s, cfg.nonwear)
            assessment = Assessment.for_series(s, cfg.assessment_days)
            days = classify_days(s, intervals, assessment, cfg.valid_day_max_nonwear)
        except ValueError as exc:
            raise PipelineError("nonwear", str(exc), sid) from exc
        out[sid] = SubjectNonwear(RecordingSpan.of(s), assessment, intervals, days)
        if not any(d.valid for d in days):
            xlog.exclude(sid, "nonwear", "no valid day")
    retained = [sid for sid, r in out.items() if any(d.valid for d in r.days)]
    xlog.account("nonwear", out, retained)
    return out


def stage_obt(nonwear: dict[str, SubjectNonwear], cfg: PipelineConfig, xlog: ExclusionLog):
    records: list[ObtRecord] = []
    summaries: dict[str, SubjectObtSummary] = {}
    rejected: Counter = Counter()
    discarded: list = []
    ids_in = [sid for sid, r in nonwear.items() if any(d.valid for d in r.days)]
    for sid in sorted(ids_in):
        r = nonwear[sid]
        try:
            cands = candidate_obts(r.span, r.intervals, r.days, r.assessment,
                                   cfg.obt_min_minutes, cfg.obt_max_minutes, rejected)
            recs = select_obt_per_night(sid, cands, discarded)
        except ValueError as exc:
            raise PipelineError("obt", str(exc), sid) from exc
        if recs:
            records.extend(recs)
            summaries[sid] = summarize_subject(recs)
        else:
            xlog.exclude(sid, "obt", "no valid OBT night")
    xlog.account("obt", ids_in, summaries)
    detail = ", ".join(f"{k}={v}" for k, v in sorted(rejected.items())) or "none"
    xlog.lines.append(f"[obt] non-wear intervals rejected as OBT: {detail}")
    xlog.lines.append(f"[obt] extra same-night candidates discarded: {len(discarded)}")
    xlog.lines.append(f"[obt] valid OBT nights: {len(records)}")
    return records, summaries


def _complete_frame(frame, lines):
    """Drop age groups lacking one sex; None when the reference cell is incomplete."""
    keep = np.ones(len(frame), dtype=bool)
    for g in sorted(set(frame.group.tolist())):
        in_g = frame.group == g
        if not (in_g & frame.male).any() or not (in_g & ~frame.male).any():
            keep &= ~in_g
            lines.append(f"[regress] {frame.outcome_kind} {frame.weekday}: age group {AGE_GROUP_LABELS[g]} "
                         f"lacks one sex, left out of the model")
    if not keep.any() or not (frame.group[keep] == AGE_GROUP_LABELS.index(REFERENCE_GROUP)).any():
        lines.append(f"[regress] {frame.outcome_kind} {frame.weekday}: reference cell incomplete, model skipped")
        return None
    if keep.all():
        return frame
    return type(frame)(
        y=frame.y[keep], male=frame.male[keep], group=frame.group[keep], weight=frame.weight[keep],
        stratum=None if frame.stratum is None else frame.stratum[keep],
        psu=None if frame.psu is None else frame.psu[keep],
        outcome_kind=frame.outcome_kind, weekday=frame.weekday,
        subject_ids=[s for s, k in zip(frame.subject_ids or [], keep) if k] or None,
    )


def stage_regress(profiles, records, cfg: PipelineConfig, lines: list[str]) -> dict[tuple[str, str], DayModelFit]:
    fits = {}
    for outcome in OUTCOMES:
        for day, frame in build_design_frames(profiles, records, outcome).items():
            if len(frame) == 0:
                lines.append(f"[regress] {outcome} {day}: no rows, model skipped")
                continue
            frame = _complete_frame(frame, lines)
            if frame is None:
                continue
            try:
                fits[(outcome, day)] = fit_day_model(frame)
            except (ModelError, np.linalg.LinAlgError) as exc:
                raise PipelineError("regress", f"{outcome} {day}: {exc}") from exc
    return fits


def regress_outputs(fits, cfg: PipelineConfig, out: Outputs):
    for outcome, coef_name, fit_name in (("OBT-D", "table2_obt_d_coefficients.csv", "table3_obt_d_fitted.csv"),
                                         ("OBT-M", "table4_obt_m_coefficients.csv", "table5_obt_m_fitted.csv")):
        chosen = [fits[(outcome, d)] for d in WEEKDAYS if (outcome, d) in fits]
        out.csv(coef_name, coefficient_table(chosen, cfg.alpha))
        out.csv(fit_name, fitted_value_tables(chosen))


def _curve_groups(grouping: str):
    if grouping == "pooled":
        return [("all", set(WEEKDAYS))]
    if grouping == "weekday":
        return [(d, {d}) for d in WEEKDAYS]
    return [("weeknight", set(WEEKDAYS) - set(WEEKEND_NIGHTS)), ("weekend", set(WEEKEND_NIGHTS))]


def stage_curves(profiles, records, cfg: PipelineConfig, lines: list[str]) -> dict[tuple[str, str, str], PercentileCurveSet]:
    """LMS curves per outcome x sex x night grouping (each night one observation)."""
    curves = {}
    for outcome in OUTCOMES:
        shift = cfg.obt_m_shift if outcome == "OBT-M" else 0.0
        for sex in ("female", "male"):
            for grouping in cfg.groupings:
                for key, days in _curve_groups(grouping):
                    rows = [(profiles[r.subject_id].age_years,
                             r.obt_d_minutes if outcome == "OBT-D" else r.obt_m_linear,
                             profiles[r.subject_id].exam_weight)
                            for r in records
                            if r.subject_id in profiles and profiles[r.subject_id].sex == sex
                            and r.assigned_weekday in days]
                    n_all = len(rows)
                    rows = [row for row in rows if row[1] + shift > 0]
                    if n_all - len(rows):
                        lines.append(f"[curves] {outcome} {sex} {key}: {n_all - len(rows)} nights outside the "
                                     f"shifted positive axis left out")
                    if not rows:
                        lines.append(f"[curves] {outcome} {sex} {key}: no observations, skipped")
                        continue
                    ages, values, weights = (np.array(c, dtype=float) for c in zip(*rows))
                    try:
                        cs = fit_lms(ages, values, weights, cfg.lms, shift=shift)
                    except LmsError as exc:
                        lines.append(f"[curves] {outcome} {sex} {key}: {exc}, skipped")
                        continue
                    cs.meta.update({"outcome": outcome, "sex": sex, "nights": key, "grouping": grouping,
                                    "observation": "one row per valid night"})
                    curves[(outcome, sex, key)] = cs
                    lines.append(f"[curves] {outcome} {sex} {key}: n={cs.n} iterations={cs.iterations} "
                                 f"converged={cs.converged}")
    return curves


def curve_outputs(curves, out: Outputs):
    for (outcome, sex, key), cs in sorted(curves.items()):
        stem = f"curves/{outcome.lower().replace('-', '_')}_{sex}_{key}"
        out.csv(stem + ".csv", cs.table())
        out.text(stem + ".json", json.dumps(cs.metadata(), indent=2, sort_keys=True, default=float) + "\n")

    def medians(outcome, keys, name):
        parts = []
        for sex in ("female", "male"):
            for key in keys:
                cs = curves.get((outcome, sex, key))
                if cs is None:
                    continue
                t = cs.table()
                frame = pd.DataFrame({"sex": sex, "nights": key, "age": t["age"], "median_min": t["P50"]})
                if outcome == "OBT-M":
                    frame["median_clock"] = [format_clock(v) for v in frame["median_min"]]
                parts.append(frame)
        cols = ["sex", "nights", "age", "median_min"] + (["median_clock"] if outcome == "OBT-M" else [])
        out.csv(name, pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=cols))

    medians("OBT-D", WEEKDAYS, "figure3_obt_d_weekday_medians.csv")
    medians("OBT-M", ("weeknight", "weekend"), "figure4_obt_m_weekpart_medians.csv")
    medians("OBT-M", WEEKDAYS, "figure5_obt_m_weekday_medians.csv")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_checksums(cfg: PipelineConfig) -> str:
    lines = []
    for key in ("epochs", "demographics", "questionnaire"):
        path = getattr(cfg, key)
        if path:
            lines.append(f"{_sha256(path)}  {key}  {os.path.basename(path)}\n")
    return "".join(lines)


@dataclass
class Report:
    outdir: Path
    files: list[Path]
    cohort: Cohort
    records: list[ObtRecord]
    summaries: dict[str, SubjectObtSummary]
    fits: dict[tuple[str, str], DayModelFit]
    curves: dict[tuple[str, str, str], PercentileCurveSet]
    log_lines: list[str] = field(default_factory=list)


def run_pipeline(cfg: PipelineConfig, curves: bool = True) -> Report:
    """Run every stage and write the report bundle to ``cfg.output_dir``."""
    out = Outputs()
    xlog = ExclusionLog()
    out.text("config.txt", cfg.to_text())
    try:
        out.text("inputs.sha256", input_checksums(cfg))
    except OSError as exc:
        raise PipelineError("ingest", str(exc)) from exc

    cohort = stage_ingest(cfg, xlog)
    out.csv("subjects.csv", subjects_frame(cohort.subjects.values()))
    out.csv("table1_demographics.csv", demographic_table(cohort.subjects.values()).reset_index(names="characteristic"))

    nonwear = stage_nonwear(cohort.series, cfg, xlog)
    for name, frame in nonwear_frames(nonwear).items():
        out.csv(name, frame)

    records, summaries = stage_obt(nonwear, cfg, xlog)
    n_valid_day = sum(1 for r in nonwear.values() if any(d.valid for d in r.days))
    xlog.lines.append(f"[obt] subjects with >=1 valid day: {n_valid_day}; with >=1 valid OBT night: {len(summaries)}")
    out.csv("obt.csv", obt_frame(records))
    out.csv("subject_obt.csv", summary_frame(summaries))

    table = participation_table(cohort.subjects, records)
    out.csv("tableA1_participation.csv", table.render().reset_index(names="row"))
    out.csv("tableA1_counts.csv", table.counts.reset_index(names="row"))

    lines = xlog.lines
    fits = stage_regress(cohort.subjects, records, cfg, lines)
    regress_outputs(fits, cfg, out)

    fitted_curves = stage_curves(cohort.subjects, records, cfg, lines) if curves else {}
    curve_outputs(fitted_curves, out)

    out.csv("figure2_self_report.csv", self_report_comparison(cohort.subjects, summaries, cfg.self_report_min_age))
    out.csv("exclusions.csv", xlog.frame())
    out.text("run.log", "".join(line + "\n" for line in lines))

    files = out.commit(cfg.output_dir)
    return Report(Path(cfg.output_dir), files, cohort, records, summaries, fits, fitted_curves, list(lines))
