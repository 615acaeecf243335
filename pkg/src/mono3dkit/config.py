"""Pipeline configuration: defaults, file parsing, provenance echo.

The config file is plain "key = value" text ('#' starts a comment).
Unknown keys are rejected so that a typo cannot silently fall back to a
default, and the effective configuration is echoed into every command
summary for reproducibility.  Per-class dimension priors use keys like
``prior.Car = <width> <length> <height>`` (meters).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict

from .errors import ConfigError
from .geometry import VirtualCameraSpec
from .pseudolabel import ClassPrior, DimensionPrior

__all__ = ["PipelineConfig", "DEFAULT_PRIORS", "load_config", "parse_config_text"]

# Rounded KITTI-scale nominal dimensions (width, length, height in meters).
DEFAULT_PRIORS: Dict[str, ClassPrior] = {
    "Car": ClassPrior(width=1.63, length=3.88, height=1.53),
    "Pedestrian": ClassPrior(width=0.66, length=0.84, height=1.76),
    "Cyclist": ClassPrior(width=0.60, length=1.76, height=1.73),
}

_PRIOR_PREFIX = "prior."


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the offline pipeline, shipped defaults inline."""

    score_threshold: float = 0.1
    outlier_k: float = 2.0
    virtual_focal: float = 900.0
    virtual_width: int = 1274
    virtual_height: int = 644
    clamp_alpha: float = 0.5
    clamp_beta: float = 2.0
    depth_window: int = 5
    fallback_grid: int = 5
    lambda_dice: float = 0.7
    lambda_bce: float = 0.3
    smooth_delta: float = 1.0
    consistency_clamp: float = 50.0
    target_depth_std: float = 0.1
    bin_count: int = 80
    depth_min: float = 2.0
    depth_max: float = 46.8
    bce_clip: float = 1e-07
    dice_smooth: float = 1e-06
    priors: Dict[str, ClassPrior] = field(default_factory=lambda: dict(DEFAULT_PRIORS))

    def __post_init__(self):
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ConfigError(f"score_threshold {self.score_threshold} outside [0, 1]")
        if self.outlier_k < 0:
            raise ConfigError(f"outlier_k must be >= 0, got {self.outlier_k}")
        if self.virtual_focal <= 0 or self.virtual_width <= 0 or self.virtual_height <= 0:
            raise ConfigError("virtual camera parameters must be positive")
        if not (0 < self.clamp_alpha <= 1 <= self.clamp_beta):
            raise ConfigError(f"clamp bounds ({self.clamp_alpha}, {self.clamp_beta}) invalid")
        if self.depth_window < 1 or self.depth_window % 2 == 0:
            raise ConfigError(f"depth_window must be odd and >= 1, got {self.depth_window}")
        if self.fallback_grid < 1:
            raise ConfigError(f"fallback_grid must be >= 1, got {self.fallback_grid}")
        if self.lambda_dice < 0 or self.lambda_bce < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.smooth_delta <= 0 or self.consistency_clamp <= 0:
            raise ConfigError("smooth_delta and consistency_clamp must be > 0")
        if self.target_depth_std <= 0:
            raise ConfigError(f"target_depth_std must be > 0, got {self.target_depth_std}")
        if self.bin_count < 1:
            raise ConfigError(f"bin_count must be >= 1, got {self.bin_count}")
        if not self.depth_min < self.depth_max:
            raise ConfigError(f"depth range [{self.depth_min}, {self.depth_max}] is empty")
        if not (0 < self.bce_clip < 0.5):
            raise ConfigError(f"bce_clip must be in (0, 0.5), got {self.bce_clip}")
        if self.dice_smooth <= 0:
            raise ConfigError(f"dice_smooth must be > 0, got {self.dice_smooth}")

    def virtual_camera(self) -> VirtualCameraSpec:
        return VirtualCameraSpec(
            focal=self.virtual_focal, width=self.virtual_width, height=self.virtual_height
        )

    def dimension_prior(self) -> DimensionPrior:
        return DimensionPrior(classes=dict(self.priors), alpha=self.clamp_alpha, beta=self.clamp_beta)

    def echo_lines(self):
        """Deterministic key = value dump for output summaries."""
        lines = []
        for f in fields(self):
            if f.name == "priors":
                continue
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        for name in sorted(self.priors):
            p = self.priors[name]
            lines.append(f"prior.{name} = {p.width} {p.length} {p.height}")
        return lines


_INT_KEYS = {"virtual_width", "virtual_height", "depth_window", "fallback_grid", "bin_count"}
_FLOAT_KEYS = {
    "score_threshold",
    "outlier_k",
    "virtual_focal",
    "clamp_alpha",
    "clamp_beta",
    "lambda_dice",
    "lambda_bce",
    "smooth_delta",
    "consistency_clamp",
    "target_depth_std",
    "depth_min",
    "depth_max",
    "bce_clip",
    "dice_smooth",
}


def _parse_number(key: str, raw: str, lineno):
    try:
        if key in _INT_KEYS:
            value = float(raw)
            if not value.is_integer():
                raise ValueError
            return int(value)
        return float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None


def parse_config_text(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse config text on top of `base` (defaults when omitted)."""
    base = base if base is not None else PipelineConfig()
    overrides: dict = {}
    priors = dict(base.priors)
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key.startswith(_PRIOR_PREFIX):
            cls = key[len(_PRIOR_PREFIX) :]
            if not cls:
                raise ConfigError(f"line {lineno}: empty class name in {key!r}")
            parts = raw_value.split()
            if len(parts) != 3:
                raise ConfigError(f"line {lineno}: prior needs 'width length height', got {raw_value!r}")
            try:
                w, l, h = (float(p) for p in parts)
            except ValueError:
                raise ConfigError(f"line {lineno}: bad prior values {raw_value!r}") from None
            priors[cls] = ClassPrior(width=w, length=l, height=h)
        elif key in _INT_KEYS or key in _FLOAT_KEYS:
            overrides[key] = _parse_number(key, raw_value, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
    return replace(base, priors=priors, **overrides)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text)
