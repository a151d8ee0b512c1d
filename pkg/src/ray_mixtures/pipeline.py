from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .config import Config
from .field import FieldOutput, FieldParams, field_forward
from .geometry import Camera, RayBatch, RaySamples, anneal_bounds, generate_rays, hierarchical_sample, image_pixels, stratified_sample
from .loss import LossBundle, LossWeights, lambda_schedule, level_loss, mse_loss, nll_terms, total_loss
from .mixture import (
    color_mixture_log_pdf,
    depth_mixture_log_pdf,
    mixing_coefficients,
    regen_color_mixture_log_pdf,
    regenerate_weights,
)
from .render import BlendWeights, RenderResult, composite_color, composite_depth, compute_blend_weights
from .tape import Array, Tape


@dataclass(frozen=True)
class LevelOutput:
    samples: RaySamples
    field: FieldOutput
    weights: BlendWeights
    rgb: Array
    depth: Array


@dataclass(frozen=True)
class StepOutput:
    total: Array
    fine: LossBundle
    coarse: LossBundle | None
    weights: LossWeights


def render_level(params: FieldParams, tape: Tape | None, rays: RayBatch, samples: RaySamples, background: np.ndarray) -> LevelOutput:
    pts = samples.points(rays)
    view = np.broadcast_to(rays.view_dirs[:, None, :], pts.shape)
    out = field_forward(params, tape, pts, view)
    bw = compute_blend_weights(out.sigma, samples.delta)
    rgb = composite_color(bw, out.mu_c, background)
    depth = composite_depth(bw, samples.t_mid, rays.dir_norm)
    return LevelOutput(samples=samples, field=out, weights=bw, rgb=rgb, depth=depth)


def level_losses(level: LevelOutput, rays: RayBatch, rgb_gt: np.ndarray, cfg: Config, weights: LossWeights) -> LossBundle:
    """MSE plus the color, depth and regenerated-color NLLs of one sampling level."""

    f = level.field
    reduction = cfg.loss.reduction
    coeff = mixing_coefficients(level.weights.w, eps=cfg.mixture.sum_eps)
    log_c = color_mixture_log_pdf(coeff, f.mu_c, f.beta, rgb_gt)
    # ray depth target: |d| of the unnormalised direction at t = 1
    log_d = depth_mixture_log_pdf(coeff, f.mu_d, f.beta, rays.dir_norm, reduction=cfg.mixture.depth_scale)
    regen = regenerate_weights(
        f.sigma,
        f.mu_d,
        level.samples.t_edges,
        stop_depth_grad=cfg.mixture.stop_depth_grad,
        eps=cfg.mixture.sum_eps,
    )
    log_c_hat = regen_color_mixture_log_pdf(regen, f.mu_c, f.beta, rgb_gt)
    mse = mse_loss(level.rgb, rgb_gt, reduction=reduction)
    nll_c, nll_d, nll_c_hat = nll_terms(log_c, log_d, log_c_hat, reduction=reduction, weights=weights)
    return level_loss(mse, nll_c, nll_d, nll_c_hat, weights)


def training_step_loss(
    params: FieldParams,
    tape: Tape,
    rays: RayBatch,
    rgb_gt: np.ndarray,
    cfg: Config,
    step: int,
    rng: np.random.Generator,
    background: np.ndarray,
) -> StepOutput:
    """Annealed bounds, coarse stratified pass, hierarchical fine pass, losses at both levels."""

    s = cfg.sampling
    rays = anneal_bounds(rays, step, anneal_steps=s.anneal_steps, start_fraction=s.anneal_start)
    weights = lambda_schedule(step, cfg.profile, cfg.loss)

    coarse_samples = stratified_sample(rays, s.n_coarse, jitter=s.jitter, rng=rng)
    coarse = render_level(params, tape, rays, coarse_samples, background)
    coarse_bundle = level_losses(coarse, rays, rgb_gt, cfg, weights)
    if s.n_fine == 0:
        return StepOutput(total=coarse_bundle.total, fine=coarse_bundle, coarse=None, weights=weights)

    fine_samples = hierarchical_sample(
        rays,
        coarse_samples,
        tp.stop_gradient(coarse.weights.w),
        s.n_fine,
        rng=rng if s.jitter else None,
        weight_floor=s.weight_floor,
    )
    fine = render_level(params, tape, rays, fine_samples, background)
    fine_bundle = level_losses(fine, rays, rgb_gt, cfg, weights)
    return StepOutput(
        total=total_loss(fine_bundle, coarse_bundle, weights),
        fine=fine_bundle,
        coarse=coarse_bundle,
        weights=weights,
    )


def single_level_loss(
    params: FieldParams,
    tape: Tape | None,
    rays: RayBatch,
    samples: RaySamples,
    rgb_gt: np.ndarray,
    cfg: Config,
    weights: LossWeights,
) -> LossBundle:
    """Full per-level objective over fixed samples (no resampling), for gradient checks."""

    level = render_level(params, tape, rays, samples, np.zeros(3))
    return level_losses(level, rays, rgb_gt, cfg, weights)


def render_rays(params: FieldParams, rays: RayBatch, cfg: Config, background: np.ndarray) -> RenderResult:
    """Deterministic coarse/fine render on plain arrays (bin centers, evenly spaced quantiles)."""

    s = cfg.sampling
    coarse_samples = stratified_sample(rays, s.n_coarse, jitter=False)
    level = render_level(params, None, rays, coarse_samples, background)
    if s.n_fine > 0:
        fine_samples = hierarchical_sample(rays, coarse_samples, level.weights.w, s.n_fine, weight_floor=s.weight_floor)
        level = render_level(params, None, rays, fine_samples, background)
    return RenderResult(rgb=level.rgb, depth=level.depth, acc=level.weights.acc)


def render_image(
    params: FieldParams,
    camera: Camera,
    cfg: Config,
    *,
    near: float,
    far: float,
    background: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render a full view in chunks; returns rgb (H, W, 3), depth (H, W), opacity (H, W)."""

    rays = generate_rays(camera, image_pixels(camera), t_near=near, t_far=far)
    chunk = max(1, cfg.train.render_chunk)
    rgb, depth, acc = [], [], []
    for start in range(0, len(rays), chunk):
        res = render_rays(params, rays.take(slice(start, start + chunk)), cfg, background)
        rgb.append(res.rgb)
        depth.append(res.depth)
        acc.append(res.acc)
    h, w = camera.height, camera.width
    return (
        np.concatenate(rgb).reshape(h, w, 3),
        np.concatenate(depth).reshape(h, w),
        np.concatenate(acc).reshape(h, w),
    )
