from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .errors import DomainError
from .render import blend
from .tape import Array


# Every density here is evaluated in log space. A component's color pdf is a
# product of three Laplace densities, which underflows in linear space long
# before the mixture itself is negligible.

EPS_SUM = 1e-12


@dataclass(frozen=True)
class MixingCoefficients:
    pi: Array  # (..., M), sums to 1 along the last axis


@dataclass(frozen=True)
class RegenWeights:
    delta_hat: Array
    trans_hat: Array
    w_hat: Array
    pi_hat: Array


def _coefficients(pi: MixingCoefficients | RegenWeights | Array) -> Array:
    if isinstance(pi, MixingCoefficients):
        return pi.pi
    if isinstance(pi, RegenWeights):
        return pi.pi_hat
    return pi


def laplace_log_pdf(c: Array, mu: Array, beta: Array) -> Array:
    """Sum over the last axis of log Laplace(c; mu, beta): -log(2 beta) - |c - mu| / beta."""

    if np.any(tp.value(beta) <= 0):
        raise DomainError("Laplace scales must be positive")
    return tp.reduce_sum(-tp.log(2.0 * beta) - tp.absolute(c - mu) / beta, axis=-1)


def mixing_coefficients(w: Array, *, eps: float = EPS_SUM) -> MixingCoefficients:
    """pi = w / sum(w) along the last axis; uniform where sum(w) < eps."""

    wv = tp.value(w)
    if np.any(wv < 0):
        raise DomainError("blending weights must be non-negative")
    m = wv.shape[-1]
    total = tp.reduce_sum(w, axis=-1, keepdims=True)
    degenerate = tp.value(total) < eps
    safe_total = tp.where(degenerate, 1.0, total)
    return MixingCoefficients(pi=tp.where(degenerate, 1.0 / m, w / safe_total))


def color_mixture_log_pdf(
    pi: MixingCoefficients | RegenWeights | Array,
    mu_c: Array,
    beta: Array,
    c_gt: np.ndarray,
) -> Array:
    """log sum_j pi_j prod_ch Laplace(c_gt; mu_c_j, beta_j) for rays (...,) with M components."""

    coeff = _coefficients(pi)
    c_gt = np.asarray(c_gt, dtype=np.float64)
    if tp.value(mu_c).shape[:-1] != tp.value(coeff).shape:
        raise DomainError("mixing coefficients and component locations disagree in length")
    log_comp = laplace_log_pdf(c_gt[..., None, :], mu_c, beta)
    return tp.log_mix(log_comp, coeff, axis=-1)


def depth_scale(beta: Array, reduction: str = "mean") -> Array:
    """Scalar Laplace scale for the depth mixture from the per-channel color scales."""

    if reduction == "mean":
        return tp.reduce_mean(beta, axis=-1)
    if reduction == "min":
        return tp.reduce_min(beta, axis=-1)
    if reduction == "max":
        return tp.reduce_max(beta, axis=-1)
    raise DomainError(f"unknown depth scale reduction {reduction!r}")


def depth_mixture_log_pdf(
    pi: MixingCoefficients | RegenWeights | Array,
    mu_d: Array,
    beta: Array,
    d_gt: np.ndarray,
    *,
    reduction: str = "mean",
) -> Array:
    """log sum_j pi_j Laplace(d_gt; mu_d_j, reduced beta_j)."""

    coeff = _coefficients(pi)
    d_gt = np.asarray(d_gt, dtype=np.float64)
    if np.any(d_gt <= 0):
        raise DomainError("ground-truth ray depth must be positive")
    scale = depth_scale(beta, reduction)
    if np.any(tp.value(scale) <= 0):
        raise DomainError("Laplace scales must be positive")
    log_comp = -tp.log(2.0 * scale) - tp.absolute(d_gt[..., None] - mu_d) / scale
    return tp.log_mix(log_comp, coeff, axis=-1)


def regenerate_weights(
    sigma: Array,
    mu_d: Array,
    t_edges: np.ndarray,
    *,
    stop_depth_grad: bool = False,
    eps: float = EPS_SUM,
) -> RegenWeights:
    """Blending weights with |d| in each interval replaced by the per-sample depth estimate.

    delta_hat_j = mu_d_j (t_{j+1} - t_j); transmittance is recomputed from delta_hat.
    """

    if np.any(tp.value(sigma) < 0):
        raise DomainError("densities must be non-negative")
    if np.any(tp.value(mu_d) < 0):
        raise DomainError("estimated depths must be non-negative")
    gaps = np.diff(np.asarray(t_edges, dtype=np.float64), axis=-1)
    if np.any(gaps <= 0):
        raise DomainError("sample edges must be strictly increasing")
    depth = tp.stop_gradient(mu_d) if stop_depth_grad else mu_d
    delta_hat = depth * gaps
    bw = blend(sigma, delta_hat)
    pi_hat = mixing_coefficients(bw.w, eps=eps).pi
    return RegenWeights(delta_hat=delta_hat, trans_hat=bw.trans, w_hat=bw.w, pi_hat=pi_hat)


def regen_color_mixture_log_pdf(
    pi_hat: RegenWeights | MixingCoefficients | Array,
    mu_c: Array,
    beta: Array,
    c_gt: np.ndarray,
) -> Array:
    """The color mixture of `color_mixture_log_pdf`, mixed by regenerated coefficients."""

    return color_mixture_log_pdf(pi_hat, mu_c, beta, c_gt)
