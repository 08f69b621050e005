"""Configuration records and shared value types.

All records are frozen dataclasses. ``validate_config`` collects every
violated invariant instead of stopping at the first one, so a bad config
file can be fixed in one pass.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


class Mode(str, enum.Enum):
    BASELINE = "baseline"
    SEMANTIC = "semantic"


class PatchLabel(str, enum.Enum):
    PORTRAIT = "portrait"
    BACKGROUND = "background"


@dataclass(frozen=True)
class TextCondition:
    style_text: str
    source_text: str = "a Photo"

    def __post_init__(self):
        if not self.style_text or not self.style_text.strip():
            raise ValueError("style_text must be nonempty")


@dataclass(frozen=True)
class Patch:
    """Square crop location. ``x`` is the column offset, ``y`` the row offset."""

    x: int
    y: int
    size: int
    label: PatchLabel
    membership_fraction: float


@dataclass(frozen=True)
class LossWeights:
    lambda_d: float = 5e2
    lambda_p: float = 9e3
    lambda_c: float = 150.0
    lambda_tv: float = 2e-3


@dataclass(frozen=True)
class ThresholdConfig:
    tau_portrait: float = 0.9
    tau_back: float = 0.65
    # single threshold used for every patch in baseline mode
    tau_baseline: float = 0.7


@dataclass(frozen=True)
class WeightPenaltyConfig:
    alpha_portrait: float = 0.2
    alpha_back: float = 1.0


@dataclass(frozen=True)
class SamplerConfig:
    n_patches: int = 64
    patch_size: int = 128
    portrait_quota: int | None = None  # None -> n_patches // 4
    membership_region: int | None = None  # None -> patch_size // 2
    membership_threshold: float = 0.5

    @property
    def quota(self) -> int:
        if self.portrait_quota is None:
            return self.n_patches // 4
        return self.portrait_quota

    @property
    def region(self) -> int:
        if self.membership_region is None:
            return max(1, self.patch_size // 2)
        return self.membership_region


@dataclass(frozen=True)
class TrainRunConfig:
    mode: Mode = Mode.SEMANTIC
    loss_weights: LossWeights = field(default_factory=LossWeights)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    penalties: WeightPenaltyConfig = field(default_factory=WeightPenaltyConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    iterations: int = 400
    initial_lr: float = 5e-4
    lr_halving_period: int = 100
    distortion_degree: float = 0.5
    seed: int = 0
    contrast_factor: float = 1.5


@dataclass(frozen=True)
class LossRecord:
    iteration: int
    l_dir: float
    l_patch: float
    l_content: float
    l_tv: float
    l_total: float
    lr: float

    COLUMNS = ("iteration", "l_dir", "l_patch", "l_content", "l_tv", "l_total", "lr")

    def as_row(self) -> dict[str, Any]:
        return {c: getattr(self, c) for c in self.COLUMNS}


# ---------------------------------------------------------------- validation


def _finite(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def config_errors(cfg: TrainRunConfig) -> list[str]:
    """Return every invariant violation in ``cfg`` (empty list if valid)."""
    errs: list[str] = []

    def nonneg(name, v):
        if not _finite(v):
            errs.append(f"{name} must be finite, got {v!r}")
        elif v < 0:
            errs.append(f"{name} must be non-negative, got {v!r}")

    def unit(name, v, hi=1.0):
        if not _finite(v):
            errs.append(f"{name} must be finite, got {v!r}")
        elif not 0.0 <= v <= hi:
            errs.append(f"{name} must lie in [0, {hi:g}], got {v!r}")

    def posint(name, v):
        if not _is_int(v) or v <= 0:
            errs.append(f"{name} must be positive")

    if not isinstance(cfg.mode, Mode):
        errs.append(f"mode must be one of {[m.value for m in Mode]}, got {cfg.mode!r}")

    w = cfg.loss_weights
    for f in fields(w):
        nonneg(f"loss_weights.{f.name}", getattr(w, f.name))

    t = cfg.thresholds
    unit("thresholds.tau_portrait", t.tau_portrait, 2.0)
    unit("thresholds.tau_back", t.tau_back, 2.0)
    unit("thresholds.tau_baseline", t.tau_baseline, 2.0)
    if _finite(t.tau_portrait) and _finite(t.tau_back) and t.tau_portrait < t.tau_back:
        errs.append("thresholds.tau_portrait < thresholds.tau_back "
                    f"({t.tau_portrait} < {t.tau_back})")

    p = cfg.penalties
    nonneg("penalties.alpha_portrait", p.alpha_portrait)
    nonneg("penalties.alpha_back", p.alpha_back)
    if _finite(p.alpha_portrait) and _finite(p.alpha_back) and p.alpha_portrait > p.alpha_back:
        errs.append("penalties.alpha_portrait > penalties.alpha_back "
                    f"({p.alpha_portrait} > {p.alpha_back})")

    s = cfg.sampler
    posint("sampler.n_patches", s.n_patches)
    posint("sampler.patch_size", s.patch_size)
    if s.portrait_quota is not None and (not _is_int(s.portrait_quota) or s.portrait_quota < 0):
        errs.append("sampler.portrait_quota must be an integer >= 0")
    elif _is_int(s.n_patches) and _is_int(s.quota) and s.quota > s.n_patches:
        errs.append(f"sampler.portrait_quota ({s.quota}) exceeds sampler.n_patches ({s.n_patches})")
    if s.membership_region is not None and (not _is_int(s.membership_region) or s.membership_region <= 0):
        errs.append("sampler.membership_region must be positive")
    elif _is_int(s.patch_size) and s.patch_size > 0 and s.region > s.patch_size:
        errs.append(f"sampler.membership_region ({s.region}) exceeds sampler.patch_size ({s.patch_size})")
    unit("sampler.membership_threshold", s.membership_threshold)

    posint("iterations", cfg.iterations)
    posint("lr_halving_period", cfg.lr_halving_period)
    if not _finite(cfg.initial_lr) or cfg.initial_lr <= 0:
        errs.append("initial_lr must be positive and finite")
    unit("distortion_degree", cfg.distortion_degree)
    if not _is_int(cfg.seed):
        errs.append("seed must be an integer")
    if not _finite(cfg.contrast_factor) or cfg.contrast_factor <= 0:
        errs.append("contrast_factor must be positive and finite")
    return errs


def validate_config(cfg: TrainRunConfig) -> TrainRunConfig:
    errs = config_errors(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg


# ------------------------------------------------------------- serialization

_SECTIONS = {
    "loss_weights": LossWeights,
    "thresholds": ThresholdConfig,
    "penalties": WeightPenaltyConfig,
    "sampler": SamplerConfig,
}


def to_flat(cfg: TrainRunConfig) -> dict[str, Any]:
    """Flatten to dotted keys, e.g. ``sampler.n_patches``."""
    out: dict[str, Any] = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            for sf in fields(v):
                out[f"{f.name}.{sf.name}"] = getattr(v, sf.name)
        elif isinstance(v, enum.Enum):
            out[f.name] = v.value
        else:
            out[f.name] = v
    return out


def _parse_scalar(text: str) -> Any:
    text = text.strip()
    if text.lower() in ("none", "null", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def from_flat(values: dict[str, Any], base: TrainRunConfig | None = None) -> TrainRunConfig:
    """Apply dotted-key overrides on top of ``base`` (defaults if omitted).

    Unknown keys raise ``ConfigError``. Values are not validated here.
    """
    cfg = base or TrainRunConfig()
    top: dict[str, Any] = {}
    nested: dict[str, dict[str, Any]] = {}
    unknown = []
    top_names = {f.name for f in fields(TrainRunConfig)}
    for key, val in values.items():
        if isinstance(val, str):
            val = _parse_scalar(val)
        section, _, name = key.partition(".")
        if name:
            cls = _SECTIONS.get(section)
            if cls is None or name not in {f.name for f in fields(cls)}:
                unknown.append(key)
                continue
            nested.setdefault(section, {})[name] = val
        elif key in top_names and key not in _SECTIONS:
            top[key] = val
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError([f"unknown configuration key: {k}" for k in unknown])
    if "mode" in top:
        try:
            top["mode"] = Mode(str(top["mode"]).lower())
        except ValueError:
            raise ConfigError([f"mode must be one of {[m.value for m in Mode]}, got {top['mode']!r}"])
    for key in ("iterations", "lr_halving_period", "seed"):
        if isinstance(top.get(key), float) and top[key].is_integer():
            top[key] = int(top[key])
    for section, vals in nested.items():
        top[section] = replace(getattr(cfg, section), **vals)
    return replace(cfg, **top)


def dump_config(cfg: TrainRunConfig) -> str:
    return "".join(f"{k} = {'none' if v is None else v}\n" for k, v in to_flat(cfg).items())


def parse_config_text(text: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected 'key = value', got {raw!r}"])
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def save_config(cfg: TrainRunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


def load_config(path, base: TrainRunConfig | None = None) -> TrainRunConfig:
    return from_flat(parse_config_text(Path(path).read_text()), base)
