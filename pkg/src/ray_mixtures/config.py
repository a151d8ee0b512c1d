from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from typing import Any

from .errors import ConfigError


DEFAULT_PROFILE = "desk"
DEFAULT_BATCH_SIZE = 4096
DEFAULT_EPOCHS = 500
DEFAULT_LR_INIT = 2e-3
DEFAULT_LR_FINAL = 2e-5


@dataclass(frozen=True)
class FieldConfig:
    l_pos: int = 8
    l_dir: int = 4
    depth: int = 4
    width: int = 128
    view_width: int = 64
    # encoded position is re-injected before this trunk layer (inactive when >= depth)
    skip_layer: int = 4
    beta_min: float = 1e-3
    sigma_bias: float = -1.0


@dataclass(frozen=True)
class SamplingConfig:
    n_coarse: int = 64
    n_fine: int = 64
    jitter: bool = True
    weight_floor: float = 1e-5
    anneal_steps: int = 256
    anneal_start: float = 0.5


@dataclass(frozen=True)
class MixtureConfig:
    # channel reduction of beta for the scalar depth mixture: mean | min | max
    depth_scale: str = "mean"
    stop_depth_grad: bool = False
    sum_eps: float = 1e-12


@dataclass(frozen=True)
class LossConfig:
    # mse | color | color_depth | color_regen | full
    variant: str = "full"
    lambda_c_start: float = 4.0
    lambda_c_end: float = 1e-3
    lambda_c_steps: int = 512
    # None means "take it from the profile"
    lambda_d: float | None = None
    lambda_c_hat: float | None = None
    coarse_mult: float = 0.1
    # mean | sum over the ray batch
    reduction: str = "mean"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: float = DEFAULT_EPOCHS
    # 0 means "derive from epochs" (pixel epochs over all training pixels)
    steps: int = 0
    lr_init: float = DEFAULT_LR_INIT
    lr_final: float = DEFAULT_LR_FINAL
    warmup_steps: int = 512
    delay_mult: float = 1e-2
    clip_value: float = 0.1
    clip_norm: float = 0.1
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100
    render_chunk: int = 1024


@dataclass(frozen=True)
class Profile:
    lambda_d: float
    lambda_c_hat: float
    lr_init: float = DEFAULT_LR_INIT
    lr_final: float = DEFAULT_LR_FINAL


# Per-dataset balancing weights; lambda_d and lambda_c_hat drop tenfold as views increase.
PROFILES: dict[str, Profile] = {
    "llff3": Profile(1e-4, 1e-5),
    "llff6": Profile(1e-5, 1e-6),
    "llff9": Profile(1e-6, 1e-7),
    "dtu3": Profile(1e-3, 1e-4),
    "dtu6": Profile(1e-4, 1e-5),
    "dtu9": Profile(1e-5, 1e-6),
    "syn4": Profile(1e-3, 1e-4, lr_init=1e-3, lr_final=1e-5),
    "syn8": Profile(1e-4, 1e-5, lr_init=1e-3, lr_final=1e-5),
    "desk": Profile(1e-3, 1e-4),
}

LOSS_VARIANTS: dict[str, tuple[bool, bool, bool]] = {
    # (nll_c, nll_d, nll_c_hat)
    "mse": (False, False, False),
    "color": (True, False, False),
    "color_depth": (True, True, False),
    "color_regen": (True, False, True),
    "full": (True, True, True),
}

DEPTH_SCALES = ("mean", "min", "max")


@dataclass(frozen=True)
class Config:
    profile: str = DEFAULT_PROFILE
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    sampling: SamplingConfig = dataclasses.field(default_factory=SamplingConfig)
    mixture: MixtureConfig = dataclasses.field(default_factory=MixtureConfig)
    loss: LossConfig = dataclasses.field(default_factory=LossConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)


SECTIONS = ("field", "sampling", "mixture", "loss", "train")

# Sizes that finish on a laptop CPU; full-scale sizes stay available through overrides.
_DESK_OVERRIDES = [
    "field.width=64",
    "field.view_width=32",
    "field.l_pos=6",
    "field.l_dir=2",
    "sampling.n_coarse=32",
    "sampling.n_fine=32",
    "train.batch_size=512",
    "train.steps=3000",
    "train.checkpoint_every=500",
]


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; expected one of {', '.join(PROFILES)}") from None


def _coerce(raw: str, annotation: str) -> Any:
    text = raw.strip()
    if "None" in annotation and text.lower() in ("none", "null", ""):
        return None
    if "bool" in annotation:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        if "int" in annotation and "float" not in annotation:
            return int(text)
        if "float" in annotation:
            return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}") from None
    return text


def apply_overrides(cfg: Config, overrides: list[str] | None) -> Config:
    """Apply `section.key=value` strings to a Config, coercing to the declared field type."""

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key == "profile":
            get_profile(raw.strip())
            cfg = dataclasses.replace(cfg, profile=raw.strip())
            continue
        if "." not in key:
            raise ConfigError(f"override key {key!r} must be section.key")
        section_name, attr = key.split(".", 1)
        if section_name not in SECTIONS:
            raise ConfigError(f"unknown config section {section_name!r}")
        section = getattr(cfg, section_name)
        by_name = {f.name: f for f in fields(section)}
        if attr not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        f = by_name[attr]
        new_value = _coerce(raw, str(f.type))
        cfg = dataclasses.replace(cfg, **{section_name: dataclasses.replace(section, **{attr: new_value})})
    validate_config(cfg)
    return cfg


def build_config(profile: str = DEFAULT_PROFILE, overrides: list[str] | None = None) -> Config:
    """Effective config for a profile: profile learning rates, desk sizes for `desk`, then overrides."""

    prof = get_profile(profile)
    cfg = Config(profile=profile, train=TrainConfig(lr_init=prof.lr_init, lr_final=prof.lr_final))
    if profile == "desk":
        cfg = apply_overrides(cfg, _DESK_OVERRIDES)
    return apply_overrides(cfg, overrides)


def validate_config(cfg: Config) -> None:
    get_profile(cfg.profile)
    t = cfg.train
    if not t.lr_init >= t.lr_final > 0:
        raise ConfigError(f"need lr_init >= lr_final > 0, got {t.lr_init} / {t.lr_final}")
    if t.batch_size < 1:
        raise ConfigError("train.batch_size must be >= 1")
    if cfg.sampling.n_coarse < 1 or cfg.sampling.n_fine < 0:
        raise ConfigError("need sampling.n_coarse >= 1 and sampling.n_fine >= 0")
    if cfg.loss.variant not in LOSS_VARIANTS:
        raise ConfigError(f"unknown loss.variant {cfg.loss.variant!r}; expected one of {', '.join(LOSS_VARIANTS)}")
    if cfg.loss.reduction not in ("mean", "sum"):
        raise ConfigError(f"loss.reduction must be mean or sum, got {cfg.loss.reduction!r}")
    if cfg.mixture.depth_scale not in DEPTH_SCALES:
        raise ConfigError(f"mixture.depth_scale must be one of {', '.join(DEPTH_SCALES)}")
    f = cfg.field
    if f.l_pos < 0 or f.l_dir < 0 or f.depth < 1 or f.width < 1 or f.view_width < 1:
        raise ConfigError("field sizes must be positive (encoding frequencies >= 0)")
    if not f.beta_min > 0:
        raise ConfigError("field.beta_min must be > 0")
    if not 0 < cfg.sampling.anneal_start <= 1:
        raise ConfigError("sampling.anneal_start must lie in (0, 1]")


def config_to_dict(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(obj: dict) -> Config:
    try:
        cfg = Config(
            profile=obj["profile"],
            field=FieldConfig(**obj["field"]),
            sampling=SamplingConfig(**obj["sampling"]),
            mixture=MixtureConfig(**obj["mixture"]),
            loss=LossConfig(**obj["loss"]),
            train=TrainConfig(**obj["train"]),
        )
    except (KeyError, TypeError) as e:
        raise ConfigError(f"malformed config: {e}") from None
    validate_config(cfg)
    return cfg


def config_json(cfg: Config) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
