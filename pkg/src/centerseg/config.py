"""Run configuration: defaults, key=value config files, CLI overrides.

The config file is line-based ``key = value`` with ``#`` comments.
Unknown keys are rejected. CLI flags override file values, which override
the defaults below. alpha=2, beta=4, IOU 0.7, D=8, k=3, beta_sample=0.75
are the published operating points; the rest are plumbing defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .losses import FocalParams
from .refine import SamplingConfig

__all__ = ["RunConfig", "parse_config_file"]


@dataclass
class RunConfig:
    n: int = 4
    min_iou: float = 0.7
    top_k: int = 100
    score_thresh: float = 0.05
    mask_thresh: float = 0.5
    k: float = 3.0
    beta_sample: float = 0.75
    D: int = 8
    seed: int = 0
    focal_alpha: float = 2.0
    focal_beta: float = 4.0

    def validate(self) -> "RunConfig":
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.min_iou < 1.0:
            raise ValueError("min_iou must be in (0, 1)")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 <= self.score_thresh <= 1.0:
            raise ValueError("score_thresh must be in [0, 1]")
        if not 0.0 <= self.mask_thresh <= 1.0:
            raise ValueError("mask_thresh must be in [0, 1]")
        # delegate the sampler and focal invariants to their owners
        SamplingConfig(self.k, self.beta_sample, self.D, self.seed)
        FocalParams(self.focal_alpha, self.focal_beta)
        return self

    def focal_params(self) -> FocalParams:
        return FocalParams(self.focal_alpha, self.focal_beta)

    def sampling_config(self) -> SamplingConfig:
        return SamplingConfig(self.k, self.beta_sample, self.D, self.seed)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        return int(raw) if kind == "int" else float(raw)
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: {exc}") from exc


def parse_config_file(path: str | Path) -> dict:
    """Parse key = value lines; '#' starts a comment; unknown keys rejected."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}: line {lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def build_config(file_path: str | Path | None, overrides: dict) -> RunConfig:
    """Defaults <- config file <- CLI overrides (None values skipped)."""
    values: dict = {}
    if file_path is not None:
        values.update(parse_config_file(file_path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()
