from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .errors import DomainError
from .tape import Array


EPS_ACC = 1e-10

BACKGROUNDS = {
    "black": (0.0, 0.0, 0.0),
    "white": (1.0, 1.0, 1.0),
}


def background_color(name: str) -> np.ndarray:
    try:
        return np.array(BACKGROUNDS[name], dtype=np.float64)
    except KeyError:
        raise DomainError(f"unknown background {name!r}; expected black or white") from None


@dataclass(frozen=True)
class BlendWeights:
    trans: Array  # (..., M) transmittance in (0, 1], first entry 1
    w: Array  # (..., M) blending weights
    acc: Array  # (...,) total opacity


@dataclass(frozen=True)
class RenderResult:
    rgb: Array
    depth: Array
    acc: Array


def _expand_last(x: Array) -> Array:
    return tp.reshape(x, tp.value(x).shape + (1,))


def blend(sigma: Array, delta: Array) -> BlendWeights:
    """Quadrature weights for densities over intervals; no precondition checks."""

    sd = sigma * delta
    trans = tp.exp(-tp.exclusive_cumsum(sd))
    alpha = -tp.expm1(-sd)
    w = trans * alpha
    return BlendWeights(trans=trans, w=w, acc=tp.reduce_sum(w, axis=-1))


def compute_blend_weights(sigma: Array, delta: Array) -> BlendWeights:
    """T_j = exp(-sum_{m<j} sigma_m delta_m), w_j = T_j (1 - exp(-sigma_j delta_j))."""

    if np.any(tp.value(sigma) < 0):
        raise DomainError("densities must be non-negative")
    if np.any(tp.value(delta) <= 0):
        raise DomainError("sample intervals must be positive")
    return blend(sigma, delta)


def composite_color(weights: BlendWeights, mu_c: Array, background: np.ndarray) -> Array:
    w_shape = tp.value(weights.w).shape
    c_shape = tp.value(mu_c).shape
    if c_shape[:-1] != w_shape:
        raise DomainError(f"colors {c_shape} do not match weights {w_shape}")
    rgb = tp.reduce_sum(_expand_last(weights.w) * mu_c, axis=-2)
    return rgb + _expand_last(1.0 - weights.acc) * np.asarray(background, dtype=np.float64)


def composite_depth(weights: BlendWeights, t_mid: np.ndarray, dir_norm: np.ndarray) -> Array:
    """Opacity-normalised expected termination distance; 0 where nothing is hit."""

    num = tp.reduce_sum(weights.w * t_mid, axis=-1) * dir_norm
    return num / tp.maximum(weights.acc, EPS_ACC)
