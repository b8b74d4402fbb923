"""Run configuration: a flat, line-oriented `key = value` text format.

Every key has a default, so an empty file (or no file) is a valid
config.  `#` starts a comment, blank lines are skipped, unknown keys are
rejected, and a key given twice takes its last value (that rule is what
lets run outputs echo the user's file verbatim and append command-line
overrides below it while still reparsing to the effective config).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .aggregation import KINDS, Aggregator
from .inference import PRIOR_MODES, PriorSettings, ThresholdSet
from .network import NetworkSpec, default_spec
from .proposals import ProposalSet
from .synthetic import JitterSpec
from .tensor_ops import OptimizerConfig


@dataclass(frozen=True)
class RunConfig:
    # paths and seeding
    dataset: str = "data"
    out_dir: str = "out"
    seed: int = 0
    # dataset generation (num_classes counts background, so 4 = 3 shapes)
    num_classes: int = 4
    per_class: int = 50
    image_size: int = 64
    clutter: bool = False
    crop_size: int = 48
    # network
    stem_channels: tuple[int, ...] = (32, 64, 64)
    head_channels: tuple[int, ...] = (64, 64, 32)
    dropout_rate: float = 0.5
    frozen_stem_layers: int = 0
    # aggregation
    aggregator: str = "lse"
    lse_r: float = 5.0
    # optimizer
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.00005
    decay_factor: float = 0.8
    decay_interval: int = 50000
    # training budget
    batch_size: int = 16
    train_steps: int = 500
    # jitter ranges
    jitter_flip: bool = True
    jitter_rotation: float = 20.0
    jitter_scale_min: float = 0.8
    jitter_scale_max: float = 1.2
    jitter_brightness: float = 0.1
    jitter_contrast_min: float = 0.8
    jitter_contrast_max: float = 1.2
    # inference priors
    prior: str = "ilp+sppxl"
    felz_k: float = 0.5
    felz_min_size: int = 16
    threshold_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    upsample_fallback: bool = False

    def validated(self) -> "RunConfig":
        """Surface value errors eagerly (enumerations, ranges, arithmetic)."""
        if self.aggregator not in KINDS:
            raise ValueError(f"aggregator must be one of {KINDS}, got {self.aggregator!r}")
        if self.prior not in PRIOR_MODES:
            raise ValueError(f"prior must be one of {PRIOR_MODES}, got {self.prior!r}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        for name in ("per_class", "image_size", "crop_size", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.train_steps < 0:
            raise ValueError(f"train_steps must be nonnegative, got {self.train_steps}")
        if self.felz_k <= 0 or self.felz_min_size <= 0:
            raise ValueError("felz_k and felz_min_size must be positive")
        for g in self.threshold_grid:
            if not 0.0 <= g < 1.0:
                raise ValueError(f"threshold_grid value {g} outside [0, 1)")
        network_spec(self)  # channel arithmetic, class count
        aggregator(self)
        optimizer_config(self)
        jitter_spec(self)
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


_DEFAULTS = RunConfig()


def _parse_value(key: str, raw: str):
    default = getattr(_DEFAULTS, key)
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(f"expected true or false, got {raw!r}")
            return low == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if raw == "":
                return ()
            # element type follows the default tuple (all defaults non-empty)
            elem = int if isinstance(default[0], int) else float
            return tuple(elem(p.strip()) for p in raw.split(","))
        return raw
    except ValueError as e:
        raise ValueError(f"config key {key!r}: {e}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw)
    return RunConfig(**values).validated()


def parse_config_file(path: str | Path) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read())


def serialize_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def echo_config(original_text: str | None, overrides: dict) -> str:
    """Provenance text for run outputs: the user's file byte for byte, then
    any command-line overrides as trailing lines (last key wins on reparse).
    Without a file, the full effective config is serialized instead."""
    if original_text is None:
        cfg = RunConfig(**overrides) if overrides else RunConfig()
        return serialize_config(cfg)
    out = original_text
    if overrides:
        if out and not out.endswith("\n"):
            out += "\n"
        out += "# command-line overrides\n"
        for key, value in overrides.items():
            out += f"{key} = {_format_value(value)}\n"
    return out


def network_spec(cfg: RunConfig) -> NetworkSpec:
    return default_spec(
        num_classes=cfg.num_classes,
        stem_channels=cfg.stem_channels,
        head_channels=cfg.head_channels,
        dropout_rate=cfg.dropout_rate,
        frozen_stem_layers=cfg.frozen_stem_layers,
        seed=cfg.seed,
    )


def aggregator(cfg: RunConfig) -> Aggregator:
    return Aggregator(kind=cfg.aggregator, r=cfg.lse_r)


def optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    return OptimizerConfig(
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        decay_factor=cfg.decay_factor,
        decay_interval=cfg.decay_interval,
    )


def jitter_spec(cfg: RunConfig) -> JitterSpec:
    return JitterSpec(
        flip=cfg.jitter_flip,
        rotation=cfg.jitter_rotation,
        scale_min=cfg.jitter_scale_min,
        scale_max=cfg.jitter_scale_max,
        brightness=cfg.jitter_brightness,
        contrast_min=cfg.jitter_contrast_min,
        contrast_max=cfg.jitter_contrast_max,
    )


def prior_settings(
    cfg: RunConfig,
    thresholds: ThresholdSet | None = None,
    proposals: ProposalSet | None = None,
) -> PriorSettings:
    return PriorSettings(
        mode=cfg.prior,
        lse_r=cfg.lse_r,
        felz_k=cfg.felz_k,
        felz_min_size=cfg.felz_min_size,
        thresholds=thresholds,
        proposals=proposals,
    )
