from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tape as tp
from .checkpoint import save_checkpoint
from .config import Config, get_profile
from .data import Scene
from .errors import DataError, DomainError, NumericFault
from .field import FieldParams, init_field_params
from .geometry import RayBatch, generate_rays, image_pixels
from .images import ensure_dir
from .optim import OptimizerState, adam_step, clip_gradients, init_optimizer, lr_at
from .pipeline import training_step_loss
from .tape import Tape, backward


logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ckpt"
LAST_GOOD_NAME = "checkpoint.last_good.ckpt"
LOSS_LOG_NAME = "loss.csv"
LOSS_COLUMNS = ("step", "lr", "mse", "nll_c", "nll_d", "nll_c_hat", "total")


@dataclass(frozen=True)
class TrainingRays:
    """Every pixel of every training view as one ray batch, plus its color and origin pixel."""

    rays: RayBatch
    colors: np.ndarray  # (N, 3)
    pixels: np.ndarray  # (N, 3) as (view, u, v)

    def __len__(self) -> int:
        return len(self.rays)


@dataclass(frozen=True)
class TrainResult:
    params: FieldParams
    state: OptimizerState
    steps: int
    checkpoint: Path
    loss_log: Path
    final: dict[str, float]


def training_rays(scene: Scene) -> TrainingRays:
    if len(scene) == 0:
        raise DomainError("scene has no training views")
    batches, colors, pixels = [], [], []
    for view, (cam, img) in enumerate(zip(scene.cameras, scene.images)):
        px = image_pixels(cam)
        batches.append(generate_rays(cam, px, t_near=scene.near, t_far=scene.far))
        colors.append(img.reshape(-1, 3))
        pixels.append(np.concatenate([np.full((len(px), 1), view, dtype=np.float64), px], axis=-1))
    rays = RayBatch(
        origins=np.concatenate([b.origins for b in batches]),
        dirs=np.concatenate([b.dirs for b in batches]),
        t_near=np.concatenate([b.t_near for b in batches]),
        t_far=np.concatenate([b.t_far for b in batches]),
    )
    return TrainingRays(rays=rays, colors=np.concatenate(colors), pixels=np.concatenate(pixels).astype(np.int64))


def total_steps(cfg: Config, n_pixels: int) -> int:
    """Explicit `train.steps`, else enough batches for `train.epochs` passes over all training pixels."""

    t = cfg.train
    if t.steps > 0:
        return t.steps
    return max(1, math.ceil(t.epochs * n_pixels / t.batch_size))


class LossLog:
    """Per-step loss CSV; truncated when a run starts, one flushed row per step."""

    def __init__(self, path: Path) -> None:
        self.path = path
        ensure_dir(path.parent)
        try:
            self._fh = path.open("w", encoding="utf-8", newline="")
        except OSError as e:
            raise DataError(f"cannot open loss log {path}: {e}") from None
        self._writer = csv.writer(self._fh)
        self._writer.writerow(LOSS_COLUMNS)

    def write(self, step: int, lr: float, values: dict[str, float]) -> None:
        self._writer.writerow([step, repr(lr)] + [repr(values[k]) for k in LOSS_COLUMNS[2:]])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> LossLog:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _step(
    params: FieldParams,
    state: OptimizerState,
    batch: RayBatch,
    gt: np.ndarray,
    cfg: Config,
    step: int,
    lr: float,
    rng: np.random.Generator,
    background: np.ndarray,
) -> tuple[FieldParams, OptimizerState, dict[str, float]]:
    tape = Tape()
    out = training_step_loss(params, tape, batch, gt, cfg, step, rng, background)
    total = float(tp.value(out.total))
    if not math.isfinite(total):
        raise NumericFault(f"loss is not finite at step {step}", step=step)
    grads = clip_gradients(backward(tape, out.total), clip_value=cfg.train.clip_value, clip_norm=cfg.train.clip_norm)
    params, state = adam_step(params, state, grads, lr)
    values = out.fine.values()
    values["total"] = total
    return params, state, values


def train(scene: Scene, cfg: Config, out_dir: Path) -> TrainResult:
    """Optimize a field on every view of `scene`; writes the loss log and checkpoints into `out_dir`."""

    out_dir = Path(out_dir)
    ensure_dir(out_dir)
    seq = np.random.SeedSequence(cfg.train.seed)
    init_seq, batch_seq, sample_seq = seq.spawn(3)
    batch_rng = np.random.default_rng(batch_seq)
    sample_rng = np.random.default_rng(sample_seq)

    params = init_field_params(cfg.field, np.random.default_rng(init_seq))
    state = init_optimizer(params)
    data = training_rays(scene)
    steps = total_steps(cfg, len(data))
    background = scene.background_rgb
    prof = get_profile(cfg.profile)

    logger.info(
        "training %d params on %d views (%d pixels), %d steps of %d rays; pixels drawn with replacement",
        params.size,
        len(scene),
        len(data),
        steps,
        cfg.train.batch_size,
    )
    logger.info(
        "loss %s: lambda_c %.3g -> %.3g over %d steps, lambda_d %.3g, lambda_c_hat %.3g; depth scale %s; bounds annealed over %d steps from %.2f",
        cfg.loss.variant,
        cfg.loss.lambda_c_start,
        cfg.loss.lambda_c_end,
        cfg.loss.lambda_c_steps,
        prof.lambda_d if cfg.loss.lambda_d is None else cfg.loss.lambda_d,
        prof.lambda_c_hat if cfg.loss.lambda_c_hat is None else cfg.loss.lambda_c_hat,
        cfg.mixture.depth_scale,
        cfg.sampling.anneal_steps,
        cfg.sampling.anneal_start,
    )

    ckpt_path = out_dir / CHECKPOINT_NAME
    values: dict[str, float] = {}
    with LossLog(out_dir / LOSS_LOG_NAME) as log:
        for step in range(steps):
            idx = batch_rng.integers(0, len(data), size=cfg.train.batch_size)
            # the last update runs at lr_final
            lr = lr_at(step, cfg.train, steps - 1)
            try:
                params, state, values = _step(
                    params, state, data.rays.take(idx), data.colors[idx], cfg, step, lr, sample_rng, background
                )
            except NumericFault as e:
                save_checkpoint(out_dir / LAST_GOOD_NAME, params, state, cfg)
                ray_ids = [int(idx[i]) for i in e.ray_ids if 0 <= i < len(idx)]
                where = [tuple(int(c) for c in data.pixels[r]) for r in ray_ids[:8]]
                logger.error("numeric fault at step %d (rays %s, view/u/v %s); last good checkpoint saved", step, ray_ids[:8], where)
                raise NumericFault(f"step {step}: {e}", step=step, ray_ids=ray_ids, index=e.index) from e
            log.write(step, lr, values)

            if cfg.train.log_every > 0 and (step + 1) % cfg.train.log_every == 0:
                logger.info("step %d/%d lr %.3g mse %.5f total %.5f", step + 1, steps, lr, values["mse"], values["total"])
            if cfg.train.checkpoint_every > 0 and (step + 1) % cfg.train.checkpoint_every == 0:
                save_checkpoint(ckpt_path, params, state, cfg)

    save_checkpoint(ckpt_path, params, state, cfg)
    return TrainResult(params=params, state=state, steps=steps, checkpoint=ckpt_path, loss_log=out_dir / LOSS_LOG_NAME, final=values)
