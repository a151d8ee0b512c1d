from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .errors import DomainError, NumericFault
from .field import FieldParams


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class OptimizerState:
    """Adam moments keyed like the field parameters; `step` counts applied updates."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    def __post_init__(self) -> None:
        if self.step < 0:
            raise DomainError(f"optimizer step must be >= 0, got {self.step}")
        if list(self.m) != list(self.v):
            raise DomainError("optimizer moments disagree on parameter names")


def init_optimizer(params: FieldParams) -> OptimizerState:
    return OptimizerState(
        m={k: np.zeros_like(a) for k, a in params.arrays.items()},
        v={k: np.zeros_like(a) for k, a in params.arrays.items()},
    )


def lr_at(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Log-linear decay from lr_init to lr_final over `total_steps`, scaled by a sine warmup."""

    if step < 0:
        raise DomainError(f"step must be >= 0, got {step}")
    frac = 1.0 if total_steps <= 0 else min(step / total_steps, 1.0)
    base = math.exp(math.log(cfg.lr_init) + frac * (math.log(cfg.lr_final) - math.log(cfg.lr_init)))
    if cfg.warmup_steps > 0:
        delay = cfg.delay_mult + (1.0 - cfg.delay_mult) * math.sin(0.5 * math.pi * min(step / cfg.warmup_steps, 1.0))
    else:
        delay = 1.0
    return delay * base


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], *, clip_value: float = 0.1, clip_norm: float = 0.1) -> dict[str, np.ndarray]:
    """Clamp every component to [-clip_value, clip_value], then rescale to global norm <= clip_norm."""

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFault(f"gradient of {name} is not finite", index=name)
    out = {k: np.clip(g, -clip_value, clip_value) for k, g in grads.items()}
    norm = global_norm(out)
    if norm > clip_norm:
        scale = clip_norm / norm
        out = {k: g * scale for k, g in out.items()}
    return out


def adam_step(params: FieldParams, state: OptimizerState, grads: dict[str, np.ndarray], lr: float) -> tuple[FieldParams, OptimizerState]:
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    new_arrays: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for name, p in params.arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DomainError(f"gradient of {name} has shape {g.shape}, expected {p.shape}")
        m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = m[name] / c1
        v_hat = v[name] / c2
        new_arrays[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params.replace(new_arrays), OptimizerState(m=m, v=v, step=t)
