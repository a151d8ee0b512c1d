from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .config import LOSS_VARIANTS, LossConfig, get_profile
from .errors import DomainError, NumericFault
from .tape import Array


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float
    lambda_d: float
    lambda_c_hat: float
    coarse_mult: float


@dataclass(frozen=True)
class LossBundle:
    mse: Array
    nll_c: Array
    nll_d: Array
    nll_c_hat: Array
    total: Array

    def values(self) -> dict[str, float]:
        return {k: float(tp.value(getattr(self, k))) for k in ("mse", "nll_c", "nll_d", "nll_c_hat", "total")}


def _reduce(per_ray: Array, reduction: str) -> Array:
    if reduction == "sum":
        return tp.reduce_sum(per_ray)
    return tp.reduce_mean(per_ray)


def mse_loss(rgb_pred: Array, rgb_gt: np.ndarray, *, reduction: str = "mean") -> Array:
    """Batch mean (or sum) of the squared color error norm."""

    gt = np.asarray(rgb_gt, dtype=np.float64)
    pred_shape = tp.value(rgb_pred).shape
    if pred_shape != gt.shape:
        raise DomainError(f"prediction {pred_shape} and target {gt.shape} differ in shape")
    if gt.size == 0:
        raise DomainError("empty ray batch")
    per_ray = tp.reduce_sum(tp.square(rgb_pred - gt), axis=-1)
    return _reduce(per_ray, reduction)


def nll_term(log_pdf: Array, *, reduction: str = "mean", name: str = "nll", check: bool = True) -> Array:
    lv = tp.value(log_pdf)
    if lv.size == 0:
        raise DomainError("empty ray batch")
    if check:
        bad = np.flatnonzero(~np.isfinite(lv))
        if bad.size:
            raise NumericFault(f"{name}: non-finite log-likelihood at ray {int(bad[0])}", ray_ids=[int(i) for i in bad])
    return _reduce(-log_pdf, reduction)


def nll_terms(
    log_c: Array,
    log_d: Array,
    log_c_hat: Array,
    *,
    reduction: str = "mean",
    weights: LossWeights | None = None,
) -> tuple[Array, Array, Array]:
    """Negated batch-mean log-likelihoods of the color, depth and regenerated-color mixtures.

    A term whose weight is exactly zero is still reported but never raises on non-finite values.
    """

    lams = (1.0, 1.0, 1.0) if weights is None else (weights.lambda_c, weights.lambda_d, weights.lambda_c_hat)
    return tuple(
        nll_term(lp, reduction=reduction, name=name, check=lam != 0.0)
        for lp, name, lam in zip((log_c, log_d, log_c_hat), ("nll_c", "nll_d", "nll_c_hat"), lams)
    )


def lambda_schedule(step: int, profile: str, cfg: LossConfig | None = None) -> LossWeights:
    """Balancing weights at `step`: lambda_c anneals linearly, the rest are per-profile constants."""

    if step < 0:
        raise DomainError(f"step must be >= 0, got {step}")
    cfg = cfg or LossConfig()
    prof = get_profile(profile)
    use_c, use_d, use_c_hat = LOSS_VARIANTS[cfg.variant]

    frac = 1.0 if cfg.lambda_c_steps <= 0 else min(step / cfg.lambda_c_steps, 1.0)
    lambda_c = cfg.lambda_c_start + (cfg.lambda_c_end - cfg.lambda_c_start) * frac
    lambda_d = prof.lambda_d if cfg.lambda_d is None else cfg.lambda_d
    lambda_c_hat = prof.lambda_c_hat if cfg.lambda_c_hat is None else cfg.lambda_c_hat
    return LossWeights(
        lambda_c=lambda_c if use_c else 0.0,
        lambda_d=lambda_d if use_d else 0.0,
        lambda_c_hat=lambda_c_hat if use_c_hat else 0.0,
        coarse_mult=cfg.coarse_mult,
    )


def level_loss(mse: Array, nll_c: Array, nll_d: Array, nll_c_hat: Array, weights: LossWeights) -> LossBundle:
    """mse + lambda_c nll_c + lambda_d nll_d + lambda_c_hat nll_c_hat for one sampling level.

    Terms with a zero weight are left out of the sum so they never reach the gradient.
    """

    total = mse
    for lam, term in ((weights.lambda_c, nll_c), (weights.lambda_d, nll_d), (weights.lambda_c_hat, nll_c_hat)):
        if lam != 0.0:
            total = total + lam * term
    return LossBundle(mse=mse, nll_c=nll_c, nll_d=nll_d, nll_c_hat=nll_c_hat, total=total)


def total_loss(fine: LossBundle, coarse: LossBundle | None, weights: LossWeights) -> Array:
    if coarse is None or weights.coarse_mult == 0.0:
        return fine.total
    return fine.total + weights.coarse_mult * coarse.total
