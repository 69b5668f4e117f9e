"""Objective bedtime from accelerometer non-wear.

Minute-epoch activity counts -> non-wear intervals -> one in-bed interval
per night (duration OBT-D, midpoint OBT-M) -> survey-weighted day-of-week
models by age group and sex, and LMS percentile curves over age.
"""

from .config import PipelineConfig
from .ingest import EpochSeries, SubjectProfile, join_cohort, parse_demographics, parse_epochs
from .lms import PercentileCurveSet, fit_lms, percentile_at, z_score
from .nonwear import NonWearParams, classify_days, detect_nonwear
from .obt import ObtRecord, assign_night, candidate_obts, select_obt_per_night, summarize_subject
from .pipeline import run_pipeline
from .survey import fit_day_model, weighted_quantile
from .synth import SynthSpec, synth_cohort

__version__ = "0.1.0"

__all__ = [
    "EpochSeries", "NonWearParams", "ObtRecord", "PercentileCurveSet", "PipelineConfig", "SubjectProfile",
    "SynthSpec", "assign_night", "candidate_obts", "classify_days", "detect_nonwear", "fit_day_model",
    "fit_lms", "join_cohort", "parse_demographics", "parse_epochs", "percentile_at", "run_pipeline",
    "select_obt_per_night", "summarize_subject", "synth_cohort", "weighted_quantile", "z_score",
]
