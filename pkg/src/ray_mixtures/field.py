from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .config import FieldConfig
from .errors import DomainError, NumericFault
from .tape import Array, Tape, backward


__all__ = [
    "FieldOutput",
    "FieldParams",
    "backward",
    "field_forward",
    "init_field_params",
    "positional_encode",
]

VIEW_NORM_TOL = 1e-6
# mu_d starts near 1 (the scale of |d| at t = 1); the raw direction head is biased along +x.
DIR_HEAD_BIAS = (1.0, 0.0, 0.0)


def positional_encode(x: np.ndarray, l: int) -> np.ndarray:
    """[x, sin(2^k pi x), cos(2^k pi x) for k < l] along the last axis (3 + 6l values for 3-vectors)."""

    if l < 0:
        raise DomainError(f"frequency count must be >= 0, got {l}")
    x = np.asarray(x, dtype=np.float64)
    parts = [x]
    for k in range(l):
        arg = (2.0**k) * np.pi * x
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def encoded_size(l: int) -> int:
    return 3 + 6 * l


def layer_shapes(cfg: FieldConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter of the field network."""

    pos_in = encoded_size(cfg.l_pos)
    dir_in = encoded_size(cfg.l_dir)
    shapes: dict[str, tuple[int, ...]] = {}
    fan_in = pos_in
    for i in range(cfg.depth):
        if i == cfg.skip_layer and i > 0:
            fan_in += pos_in
        shapes[f"trunk.{i}.w"] = (fan_in, cfg.width)
        shapes[f"trunk.{i}.b"] = (cfg.width,)
        fan_in = cfg.width
    shapes["sigma.w"] = (cfg.width, 1)
    shapes["sigma.b"] = (1,)
    shapes["beta.w"] = (cfg.width, 3)
    shapes["beta.b"] = (3,)
    shapes["bottleneck.w"] = (cfg.width, cfg.width)
    shapes["bottleneck.b"] = (cfg.width,)
    shapes["view.w"] = (cfg.width + dir_in, cfg.view_width)
    shapes["view.b"] = (cfg.view_width,)
    shapes["rgb.w"] = (cfg.view_width, 3)
    shapes["rgb.b"] = (3,)
    shapes["dir.w"] = (cfg.view_width, 3)
    shapes["dir.b"] = (3,)
    return shapes


@dataclass
class FieldParams:
    config: FieldConfig
    arrays: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        expected = layer_shapes(self.config)
        if list(expected) != list(self.arrays):
            raise DomainError("field parameters do not match the architecture")
        for name, shape in expected.items():
            arr = self.arrays[name]
            if arr.shape != shape:
                raise DomainError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericFault(f"parameter {name} is not finite", index=name)

    @property
    def size(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def descriptor(self) -> dict:
        return {
            "field": {k: getattr(self.config, k) for k in self.config.__dataclass_fields__},
            "shapes": {name: list(a.shape) for name, a in self.arrays.items()},
        }

    def copy(self) -> FieldParams:
        return FieldParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def replace(self, arrays: dict[str, np.ndarray]) -> FieldParams:
        return FieldParams(self.config, {k: np.asarray(arrays[k], dtype=np.float64) for k in self.arrays})


def init_field_params(cfg: FieldConfig, rng: np.random.Generator) -> FieldParams:
    """Uniform fan-in weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases."""

    arrays: dict[str, np.ndarray] = {}
    for name, shape in layer_shapes(cfg).items():
        if name.endswith(".w"):
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            arrays[name] = np.zeros(shape)
    arrays["dir.b"] = np.array(DIR_HEAD_BIAS, dtype=np.float64)
    return FieldParams(cfg, arrays)


@dataclass(frozen=True)
class FieldOutput:
    mu_c: Array  # (..., 3) in [0, 1]
    sigma: Array  # (...,) >= 0
    beta: Array  # (..., 3) >= beta_min
    mu_d: Array  # (...,) = |mu_d_vec|
    mu_d_vec: Array  # (..., 3)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))[0]
        raise NumericFault(f"{name} is not finite at {tuple(int(i) for i in bad)}", index=name)


def field_forward(params: FieldParams, tape: Tape | None, pos: np.ndarray, view: np.ndarray) -> FieldOutput:
    """Evaluate the field at positions `pos` (..., 3) seen along unit directions `view` (..., 3).

    Density and scale depend on position only; color and the raw depth vector also see
    the view direction. With a tape every parameter and output is recorded; with
    `tape=None` the pass runs on plain arrays.
    """

    cfg = params.config
    pos = np.asarray(pos, dtype=np.float64)
    view = np.asarray(view, dtype=np.float64)
    _check_finite("position", pos)
    _check_finite("view direction", view)
    if np.any(np.abs(np.linalg.norm(view, axis=-1) - 1.0) > VIEW_NORM_TOL):
        raise DomainError("view directions must be unit vectors")
    view = np.broadcast_to(view, pos.shape)
    lead = pos.shape[:-1]

    def p(name: str) -> Array:
        arr = params.arrays[name]
        return tape.param(name, arr) if tape is not None else arr

    enc_pos = positional_encode(pos.reshape(-1, 3), cfg.l_pos)
    enc_dir = positional_encode(view.reshape(-1, 3), cfg.l_dir)

    x: Array = enc_pos
    for i in range(cfg.depth):
        if i == cfg.skip_layer and i > 0:
            x = tp.concatenate([x, enc_pos], axis=-1)
        x = tp.relu(tp.matmul(x, p(f"trunk.{i}.w")) + p(f"trunk.{i}.b"))

    raw_sigma = tp.matmul(x, p("sigma.w")) + p("sigma.b")
    sigma = tp.softplus(raw_sigma + cfg.sigma_bias)[:, 0]
    beta = tp.softplus(tp.matmul(x, p("beta.w")) + p("beta.b")) + cfg.beta_min

    bottleneck = tp.matmul(x, p("bottleneck.w")) + p("bottleneck.b")
    v = tp.relu(tp.matmul(tp.concatenate([bottleneck, enc_dir], axis=-1), p("view.w")) + p("view.b"))
    mu_c = tp.sigmoid(tp.matmul(v, p("rgb.w")) + p("rgb.b"))
    mu_d_vec = tp.matmul(v, p("dir.w")) + p("dir.b")
    mu_d = tp.l2_norm(mu_d_vec, axis=-1)

    return FieldOutput(
        mu_c=tp.reshape(mu_c, lead + (3,)),
        sigma=tp.reshape(sigma, lead),
        beta=tp.reshape(beta, lead + (3,)),
        mu_d=tp.reshape(mu_d, lead),
        mu_d_vec=tp.reshape(mu_d_vec, lead + (3,)),
    )
