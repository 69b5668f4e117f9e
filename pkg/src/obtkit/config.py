"""Pipeline configuration and its flat ``key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .ingest import WEIGHT_SCHEMES
from .lms import LmsConfig
from .nonwear import ConfigError, NonWearParams

CURVE_GROUPINGS = ("pooled", "weekday", "weekpart")


@dataclass
class PipelineConfig:
    epochs: str = ""
    demographics: str = ""
    questionnaire: str = ""
    output_dir: str = "obt_report"
    weight_scheme: str = "single-cycle"
    assessment_days: int = 7
    nonwear_min_len: int = 60
    nonwear_max_interrupts: int = 2
    nonwear_interrupt_ceiling: int = 100
    valid_day_max_nonwear: int = 600
    obt_min_minutes: int = 240
    obt_max_minutes: int = 840
    alpha: float = 0.05
    lms_edf_L: float = 3.0
    lms_edf_M: float = 5.0
    lms_edf_S: float = 3.0
    lms_tol: float = 1e-6
    lms_max_iter: int = 50
    obt_m_shift: float = 720.0
    curve_grouping: str = "pooled,weekday,weekpart"
    self_report_min_age: int = 16
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("assessment_days", "nonwear_min_len", "nonwear_interrupt_ceiling", "valid_day_max_nonwear",
                    "obt_min_minutes", "obt_max_minutes", "alpha", "lms_edf_L", "lms_edf_M", "lms_edf_S",
                    "lms_tol", "lms_max_iter")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.nonwear_max_interrupts < 0:
            raise ConfigError("nonwear_max_interrupts must be >= 0")
        if self.obt_min_minutes >= self.obt_max_minutes:
            raise ConfigError("obt_min_minutes must be below obt_max_minutes")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.weight_scheme not in WEIGHT_SCHEMES:
            raise ConfigError(f"weight_scheme must be one of {WEIGHT_SCHEMES}")
        bad = [g for g in self.groupings if g not in CURVE_GROUPINGS]
        if bad:
            raise ConfigError(f"unknown curve grouping(s): {bad}")

    @property
    def groupings(self) -> list[str]:
        return [g.strip() for g in self.curve_grouping.split(",") if g.strip()]

    @property
    def nonwear(self) -> NonWearParams:
        return NonWearParams(self.nonwear_min_len, self.nonwear_max_interrupts, self.nonwear_interrupt_ceiling)

    @property
    def lms(self) -> LmsConfig:
        return LmsConfig(self.lms_edf_L, self.lms_edf_M, self.lms_edf_S, self.lms_tol, self.lms_max_iter)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str, **overrides) -> "PipelineConfig":
        values = {}
        types = {f.name: f.type for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, key)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _coerce(type_name, value: str, key: str):
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {value!r}") from None
    return value
