"""Command line: ``obtkit <stage> [options]``.

``report`` runs everything.  The staged commands share one output directory
and read the previous stage's CSVs from it, so a partial pipeline can be
rerun from any point::

    obtkit ingest  --epochs e.csv --demographics d.csv --questionnaire q.csv -o out
    obtkit nonwear --epochs e.csv -o out
    obtkit obt -o out
    obtkit regress -o out
    obtkit curves -o out
    obtkit compare-selfreport -o out

Every config field is also a flag (``--valid-day-max-nonwear 600``); flags
override values read from ``--config``.
"""

from __future__ import annotations

import argparse
import logging
import sys
import typing
from collections import defaultdict
from dataclasses import fields
from pathlib import Path

from .clock import WEEKDAYS
from .config import PipelineConfig
from .ingest import EpochSeries, parse_epochs
from .nonwear import ConfigError
from .obt import summarize_subject
from .pipeline import (
    ExclusionLog, Outputs, PipelineError, curve_outputs, input_checksums, nonwear_frames, obt_frame,
    read_nonwear, read_obt, read_subjects, regress_outputs, run_pipeline, stage_curves, stage_ingest,
    stage_nonwear, stage_obt, stage_regress, subjects_frame, summary_frame,
)
from .survey import demographic_table, participation_table, self_report_comparison
from .synth import SynthSpec, synth_cohort

log = logging.getLogger("obtkit")

STAGES = ("ingest", "nonwear", "obt", "regress", "curves", "compare-selfreport", "report")


def _config_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    parser.add_argument("--config", help="flat 'key = value' config file")
    hints = typing.get_type_hints(PipelineConfig)
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag, "-o"] if f.name == "output_dir" else [flag]
        parser.add_argument(*names, dest=f.name, type=hints[f.name], default=None,
                            help=f"(default {f.default!r})")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="obtkit", description="Objective bedtime pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _config_parser()
    helps = {
        "ingest": "parse inputs, write subjects.csv and the demographic table",
        "nonwear": "detect non-wear and classify days (reads --epochs; honours subjects.csv)",
        "obt": "select one objective bedtime per night from the non-wear stage",
        "regress": "day-of-week survey models and the participation table",
        "curves": "LMS percentile curves and figure median data",
        "compare-selfreport": "objective vs self-reported sleep by age group and sex",
        "report": "run every stage and write the full bundle",
    }
    for name in STAGES:
        sub.add_parser(name, parents=[common], help=helps[name])

    syn = sub.add_parser("synth", help="write a synthetic cohort with planted ground truth")
    syn.add_argument("-o", "--output-dir", required=True)
    syn.add_argument("-n", "--n-subjects", type=int, default=200)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--removal-prob", type=float, default=1.0)
    syn.add_argument("--swim-rate", type=float, default=0.0, help="removal bouts per day")
    syn.add_argument("--swim-minutes", type=float, default=30.0)
    syn.add_argument("--chronotype-sd", type=float, default=30.0)
    syn.add_argument("--tib-sd", type=float, default=25.0)
    syn.add_argument("--night-sd", type=float, default=15.0)
    syn.add_argument("--weekend-delay", action="append", default=[], metavar="DAY=MIN",
                     help="OBT-M delay for a night, e.g. Fri=60 (repeatable)")
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(PipelineConfig)}
    if args.config:
        return PipelineConfig.from_file(args.config, **overrides)
    return PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise PipelineError(stage, f"missing {path.name} in {path.parent}; run the previous stage first")
    return path


def _finish(out: Outputs, cfg: PipelineConfig, stage: str, lines: list[str]):
    out.text(f"logs/{stage}.log", "".join(line + "\n" for line in lines))
    out.commit(cfg.output_dir)
    for line in lines:
        log.info(line)


def cmd_ingest(cfg: PipelineConfig):
    out, xlog = Outputs(), ExclusionLog()
    out.text("config.txt", cfg.to_text())
    out.text("inputs.sha256", input_checksums(cfg))
    cohort = stage_ingest(cfg, xlog)
    out.csv("subjects.csv", subjects_frame(cohort.subjects.values()))
    out.csv("table1_demographics.csv", demographic_table(cohort.subjects.values()).reset_index(names="characteristic"))
    out.csv("exclusions_ingest.csv", xlog.frame())
    _finish(out, cfg, "ingest", xlog.lines)


def cmd_nonwear(cfg: PipelineConfig):
    if not cfg.epochs:
        raise PipelineError("nonwear", "--epochs is required")
    try:
        series: dict[str, EpochSeries] = {s.subject_id: s for s in parse_epochs(cfg.epochs)}
    except (ValueError, OSError) as exc:
        raise PipelineError("nonwear", str(exc)) from exc
    subjects = Path(cfg.output_dir) / "subjects.csv"
    if subjects.exists():
        keep = set(read_subjects(subjects))
        series = {k: v for k, v in series.items() if k in keep}
    out, xlog = Outputs(), ExclusionLog()
    results = stage_nonwear(series, cfg, xlog)
    for name, frame in nonwear_frames(results).items():
        out.csv(name, frame)
    out.csv("exclusions_nonwear.csv", xlog.frame())
    _finish(out, cfg, "nonwear", xlog.lines)


def cmd_obt(cfg: PipelineConfig):
    workdir = Path(cfg.output_dir)
    for name in ("recordings.csv", "intervals.csv", "days.csv"):
        _require(workdir / name, "obt")
    out, xlog = Outputs(), ExclusionLog()
    records, summaries = stage_obt(read_nonwear(workdir), cfg, xlog)
    out.csv("obt.csv", obt_frame(records))
    out.csv("subject_obt.csv", summary_frame(summaries))
    out.csv("exclusions_obt.csv", xlog.frame())
    _finish(out, cfg, "obt", xlog.lines)


def _read_stage(cfg: PipelineConfig, stage: str):
    workdir = Path(cfg.output_dir)
    profiles = read_subjects(_require(workdir / "subjects.csv", stage))
    records = [r for r in read_obt(_require(workdir / "obt.csv", stage)) if r.subject_id in profiles]
    return profiles, records


def cmd_regress(cfg: PipelineConfig):
    profiles, records = _read_stage(cfg, "regress")
    out, lines = Outputs(), []
    table = participation_table(profiles, records)
    out.csv("tableA1_participation.csv", table.render().reset_index(names="row"))
    out.csv("tableA1_counts.csv", table.counts.reset_index(names="row"))
    regress_outputs(stage_regress(profiles, records, cfg, lines), cfg, out)
    _finish(out, cfg, "regress", lines)


def cmd_curves(cfg: PipelineConfig):
    profiles, records = _read_stage(cfg, "curves")
    out, lines = Outputs(), []
    curve_outputs(stage_curves(profiles, records, cfg, lines), out)
    _finish(out, cfg, "curves", lines)


def cmd_compare_selfreport(cfg: PipelineConfig):
    profiles, records = _read_stage(cfg, "compare-selfreport")
    by_subject = defaultdict(list)
    for r in records:
        by_subject[r.subject_id].append(r)
    summaries = {sid: summarize_subject(recs) for sid, recs in by_subject.items()}
    out = Outputs()
    out.csv("figure2_self_report.csv", self_report_comparison(profiles, summaries, cfg.self_report_min_age))
    _finish(out, cfg, "compare-selfreport", [f"[compare-selfreport] subjects with OBT nights: {len(summaries)}"])


def cmd_report(cfg: PipelineConfig):
    report = run_pipeline(cfg)
    for line in report.log_lines:
        log.info(line)
    print(f"wrote {len(report.files)} files to {report.outdir}")


def cmd_synth(args: argparse.Namespace):
    delays = {}
    for item in args.weekend_delay:
        day, sep, minutes = item.partition("=")
        if not sep or day not in WEEKDAYS:
            raise ValueError(f"--weekend-delay expects DAY=MIN with DAY in {WEEKDAYS}, got {item!r}")
        delays[day] = float(minutes)
    spec = SynthSpec(n_subjects=args.n_subjects, removal_prob=args.removal_prob, swim_rate=args.swim_rate,
                     swim_minutes=args.swim_minutes, chronotype_sd=args.chronotype_sd, tib_sd=args.tib_sd,
                     night_sd=args.night_sd, weekend_delay=delays)
    paths = synth_cohort(spec, args.seed).write(args.output_dir)
    for key, path in paths.items():
        print(f"{key}: {path}")


COMMANDS = {
    "ingest": cmd_ingest, "nonwear": cmd_nonwear, "obt": cmd_obt, "regress": cmd_regress,
    "curves": cmd_curves, "compare-selfreport": cmd_compare_selfreport, "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    stage = args.command
    try:
        if stage == "synth":
            cmd_synth(args)
        else:
            cfg = load_config(args)
            COMMANDS[stage](cfg)
    except PipelineError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"[config] {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"[{stage}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
