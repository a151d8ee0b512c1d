from __future__ import annotations

import logging
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from . import tape as tp
from .checkpoint import checkpoint_bytes, parse_checkpoint
from .config import Config, FieldConfig, SamplingConfig, TrainConfig, build_config
from .data import Scene, held_out_views, select_views
from .errors import RayMixturesError
from .field import FieldParams, init_field_params
from .geometry import Ray, RayBatch, generate_rays, image_pixels, stratified_sample
from .loss import LossWeights, lambda_schedule
from .metrics import IDENTICAL, SSIM_C1, SSIM_C2, depth_mae, gaussian_window, geometric_average, psnr, ssim
from .mixture import color_mixture_log_pdf, mixing_coefficients, regenerate_weights
from .optim import clip_gradients, global_norm, lr_at
from .pipeline import render_image, single_level_loss
from .render import compute_blend_weights
from .synthetic import (
    CameraRing,
    Primitive,
    SyntheticScene,
    random_scene,
    render_scene_numeric,
    render_synthetic_gt,
    render_views,
    segment_samples,
    render_with_samples,
    ring_cameras,
)
from .tape import Tape, backward
from .trainer import train


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SuiteResult:
    name: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str, passed: bool, detail: str = "") -> bool:
        self.checks.append(Check(name, bool(passed), detail))
        if not passed:
            logger.warning("%s/%s failed: %s", self.name, name, detail)
        return bool(passed)

    def to_json(self) -> dict:
        return {
            "suite": self.name,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
        }


# --- mixture -----------------------------------------------------------------


def mixture_suite(res: SuiteResult, seed: int) -> None:
    rng = np.random.default_rng(seed)
    n, m = 10_000, 16
    w = rng.random((n, m)) * rng.random((n, 1))
    w[: n // 10] = 0.0  # degenerate rays with no weight
    w[n // 10 : n // 5, m // 2 :] = 0.0
    pi = mixing_coefficients(w).pi
    res.check("pi sums to one", np.max(np.abs(pi.sum(axis=-1) - 1.0)) <= 1e-6, f"max dev {np.max(np.abs(pi.sum(axis=-1) - 1.0)):.2e}")

    sigma = rng.exponential(2.0, (n, m)) * (rng.random((n, m)) > 0.2)
    edges = np.cumsum(rng.uniform(0.01, 0.2, (n, m + 1)), axis=-1)
    mu_d = rng.uniform(0.5, 2.0, (n, m))
    pi_hat = regenerate_weights(sigma, mu_d, edges).pi_hat
    dev = np.max(np.abs(pi_hat.sum(axis=-1) - 1.0))
    res.check("regenerated pi sums to one", dev <= 1e-6, f"max dev {dev:.2e}")

    # per-channel quadrature of a 1-D mixture density
    worst = 0.0
    for _ in range(20):
        k = int(rng.integers(1, 9))
        pi1 = rng.dirichlet(np.ones(k))
        mu = rng.uniform(0.0, 1.0, k)
        beta = rng.uniform(0.02, 0.3, k)
        x = np.linspace(-12.0, 13.0, 200_001)
        log_comp = -np.log(2.0 * beta) - np.abs(x[:, None] - mu) / beta
        dens = np.exp(tp.log_mix(log_comp, np.broadcast_to(pi1, log_comp.shape)))
        worst = max(worst, abs(trapezoid(dens, x) - 1.0))
    res.check("mixture pdf integrates to one", worst <= 1e-3, f"max dev {worst:.2e}")

    # stable log-sum vs brute force in extended precision
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(1, 17))
        logs = rng.uniform(-60.0, 5.0, k)
        pis = rng.dirichlet(np.ones(k))
        got = float(tp.log_mix(logs, pis))
        ref = float(np.log(np.sum(pis.astype(np.longdouble) * np.exp(logs.astype(np.longdouble)))))
        worst = max(worst, abs(got - ref))
    res.check("log-sum matches brute force", worst <= 1e-10, f"max dev {worst:.2e}")

    # mixture of one component reduces to a single Laplace
    c = rng.random((5, 3))
    mu_c = rng.random((5, 1, 3))
    beta = rng.uniform(0.1, 1.0, (5, 1, 3))
    got = color_mixture_log_pdf(np.ones((5, 1)), mu_c, beta, c)
    ref = np.sum(-np.log(2 * beta[:, 0]) - np.abs(c - mu_c[:, 0]) / beta[:, 0], axis=-1)
    res.check("single component", np.max(np.abs(got - ref)) <= 1e-12)


def regen_suite(res: SuiteResult, seed: int) -> None:
    rng = np.random.default_rng(seed)
    n, m = 1000, 32
    dirs = rng.normal(size=(n, 3))
    dirs *= rng.uniform(0.5, 2.0, (n, 1)) / np.linalg.norm(dirs, axis=-1, keepdims=True)
    rays = RayBatch(origins=rng.normal(size=(n, 3)), dirs=dirs, t_near=np.full(n, 1.0), t_far=np.full(n, 4.0))
    samples = stratified_sample(rays, m, jitter=True, rng=rng)
    sigma = rng.exponential(1.5, (n, m))
    w = compute_blend_weights(sigma, samples.delta).w
    mu_d = np.broadcast_to(rays.dir_norm[:, None], (n, m))
    w_hat = regenerate_weights(sigma, mu_d, samples.t_edges).w_hat
    dev = float(np.max(np.abs(w_hat - w)))
    res.check("regenerated weights equal blend weights at true depth", dev <= 1e-12, f"max dev {dev:.2e}")

    mu_d2 = mu_d * rng.uniform(1.1, 2.0, (n, m))
    w_far = regenerate_weights(sigma, mu_d2, samples.t_edges).w_hat
    res.check("longer intervals raise the opacity", bool(np.all(w_far.sum(-1) >= w.sum(-1) - 1e-12)))


# --- renderer oracle ------------------------------------------------------------


def _axis_ray(t_near: float, t_far: float) -> Ray:
    return Ray(origin=np.array([0.0, 0.0, 0.0]), dir=np.array([0.0, 0.0, -1.0]), t_near=t_near, t_far=t_far)


def image_error(a: np.ndarray, b: np.ndarray) -> float:
    """Largest per-channel mean absolute difference."""
    return float(np.max(np.mean(np.abs(a - b), axis=0)))


def oracle_suite(res: SuiteResult, seed: int) -> None:
    c0 = (0.9, 0.4, 0.1)
    # homogeneous slab: box spanning z in (-5, -3) seen from the origin
    slab = SyntheticScene(primitives=(Primitive.box((0.0, 0.0, -4.0), (10.0, 10.0, 1.0), 3.0, c0),), near=1.0, far=8.0, background="white")
    ray = _axis_ray(1.0, 8.0)
    exact = render_synthetic_gt(slab, RayBatch.from_rays([ray])).rgb[0]
    closed = np.asarray(c0) * -math.expm1(-6.0) + math.exp(-6.0)
    res.check("homogeneous slab closed form", np.max(np.abs(exact - closed)) <= 1e-12, f"{exact} vs {closed}")
    batch, samples = segment_samples(slab, ray)
    numeric = render_with_samples(slab, batch, samples).rgb[0]
    res.check("homogeneous slab aligned samples", np.max(np.abs(numeric - closed)) <= 1e-12)

    c1 = (0.2, 0.7, 0.5)
    two = SyntheticScene(
        primitives=(
            Primitive.box((0.0, 0.0, -2.5), (10.0, 10.0, 0.5), 1.5, c0),
            Primitive.box((0.0, 0.0, -5.0), (10.0, 10.0, 1.0), 0.7, c1),
        ),
        near=1.0,
        far=8.0,
    )
    a1, a2 = -math.expm1(-1.5), -math.expm1(-1.4)
    closed = np.asarray(c0) * a1 + (1.0 - a1) * np.asarray(c1) * a2
    exact = render_synthetic_gt(two, RayBatch.from_rays([ray])).rgb[0]
    res.check("two-slab closed form", np.max(np.abs(exact - closed)) <= 1e-12)
    batch, samples = segment_samples(two, ray)
    numeric = render_with_samples(two, batch, samples).rgb[0]
    res.check("two-slab aligned samples", np.max(np.abs(numeric - closed)) <= 1e-12)

    rng = np.random.default_rng(seed)
    cameras = ring_cameras(CameraRing(count=10, width=32, height=32))
    for i, cam in enumerate(cameras):
        scene = random_scene(rng)
        rays = generate_rays(cam, image_pixels(cam), t_near=scene.near, t_far=scene.far)
        gt = render_synthetic_gt(scene, rays).rgb
        errs = [image_error(render_scene_numeric(scene, rays, m).rgb, gt) for m in (16, 64, 256)]
        ok = errs[0] > errs[1] > errs[2] and errs[2] < 5e-3
        res.check(f"stratified convergence scene {i}", ok, " / ".join(f"{e:.2e}" for e in errs))


# --- gradient check -------------------------------------------------------------


GRADCHECK_FIELD = FieldConfig(l_pos=1, l_dir=1, depth=2, width=16, view_width=8, skip_layer=1)
GRADCHECK_WEIGHTS = LossWeights(lambda_c=1.0, lambda_d=0.5, lambda_c_hat=0.25, coarse_mult=0.1)


def _gradcheck_loss(params: FieldParams, tape: Tape | None, rays: RayBatch, rgb: np.ndarray, cfg: Config):
    samples = stratified_sample(rays, 2, jitter=False)
    return single_level_loss(params, tape, rays, samples, rgb, cfg, GRADCHECK_WEIGHTS).total


def gradient_check(seed: int, *, coords: int = 64, h: float = 1e-5) -> tuple[float, int, int]:
    """Compare tape gradients with central differences on `coords` random coordinates.

    Returns (worst relative error, failures, parameter count).
    """

    rng = np.random.default_rng(seed)
    cfg = Config(field=GRADCHECK_FIELD)
    params = init_field_params(cfg.field, rng)
    # nudge biases off zero so every head is exercised
    params = params.replace({k: a + (rng.normal(0.0, 0.1, a.shape) if k.endswith(".b") else 0.0) for k, a in params.arrays.items()})
    n = 4
    dirs = rng.normal(size=(n, 3)) * 0.3 + np.array([0.0, 0.0, -1.0])
    rays = RayBatch(origins=rng.normal(0.0, 0.2, (n, 3)), dirs=dirs, t_near=np.full(n, 1.0), t_far=np.full(n, 2.5))
    rgb = rng.random((n, 3))

    tape = Tape()
    grads = backward(tape, _gradcheck_loss(params, tape, rays, rgb, cfg))

    names = list(params.arrays)
    sizes = np.array([params.arrays[k].size for k in names])
    flat_ids = rng.choice(int(sizes.sum()), size=min(coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst, failures = 0.0, 0
    for fid in flat_ids:
        j = int(np.searchsorted(offsets, fid, side="right") - 1)
        name, idx = names[j], np.unravel_index(int(fid - offsets[j]), params.arrays[names[j]].shape)

        def shifted(d: float) -> float:
            arr = params.arrays[name].copy()
            arr[idx] += d
            return float(_gradcheck_loss(params.replace({**params.arrays, name: arr}), None, rays, rgb, cfg))

        fd = (shifted(h) - shifted(-h)) / (2.0 * h)
        g = float(grads[name][idx])
        err = abs(g - fd)
        scale = max(abs(g), abs(fd))
        ok = err <= 1e-6 if scale < 1e-3 else err <= 1e-4 * scale
        worst = max(worst, err / max(scale, 1e-3))
        failures += 0 if ok else 1
    return worst, failures, params.size


def gradcheck_suite(res: SuiteResult, seed: int) -> None:
    for s in range(20):
        worst, failures, size = gradient_check(seed * 1000 + s)
        res.check(f"seed {s}", failures == 0 and size <= 2000, f"{size} params, worst rel err {worst:.2e}, {failures} failures")


# --- schedules ----------------------------------------------------------------


def schedule_suite(res: SuiteResult, seed: int) -> None:
    w0 = lambda_schedule(0, "llff3")
    w_end = lambda_schedule(512, "llff3")
    res.check("lambda_c at 0", w0.lambda_c == 4.0, str(w0.lambda_c))
    res.check("lambda_c after annealing", abs(w_end.lambda_c - 1e-3) <= 1e-15 and lambda_schedule(10_000, "llff3").lambda_c == w_end.lambda_c)
    t = TrainConfig(lr_init=2e-3, lr_final=2e-5)
    total = 10_000
    res.check("lr at step 0", math.isclose(lr_at(0, t, total), 2e-5, rel_tol=1e-12), repr(lr_at(0, t, total)))
    res.check("lr at final step", math.isclose(lr_at(total, t, total), 2e-5, rel_tol=1e-12), repr(lr_at(total, t, total)))
    after = [lr_at(s, t, total) for s in range(t.warmup_steps, total + 1, 97)]
    res.check("lr non-increasing after warmup", all(a >= b for a, b in zip(after, after[1:])))

    rng = np.random.default_rng(seed)
    worst_norm, worst_val = 0.0, 0.0
    for _ in range(200):
        grads = {f"p{i}": rng.normal(0.0, 10.0 ** rng.uniform(-4, 1), size=int(rng.integers(1, 50))) for i in range(4)}
        out = clip_gradients(grads)
        worst_norm = max(worst_norm, global_norm(out))
        worst_val = max(worst_val, max(float(np.max(np.abs(g))) for g in out.values()))
    res.check("clipped norm <= 0.1", worst_norm <= 0.1 + 1e-12, f"{worst_norm!r}")
    res.check("clipped values <= 0.1", worst_val <= 0.1, f"{worst_val!r}")


# --- metrics ------------------------------------------------------------------


def ssim_direct(a: np.ndarray, b: np.ndarray) -> float:
    """Windowed SSIM by explicit loops over every valid window position."""

    win = gaussian_window()
    k = win.shape[0]
    h, w = a.shape
    vals = []
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            pa, pb = a[i : i + k, j : j + k], b[i : i + k, j : j + k]
            ma, mb = np.sum(win * pa), np.sum(win * pb)
            va = np.sum(win * (pa - ma) ** 2)
            vb = np.sum(win * (pb - mb) ** 2)
            cv = np.sum(win * (pa - ma) * (pb - mb))
            vals.append(((2 * ma * mb + SSIM_C1) * (2 * cv + SSIM_C2)) / ((ma**2 + mb**2 + SSIM_C1) * (va + vb + SSIM_C2)))
    return float(np.mean(vals))


def metrics_suite(res: SuiteResult, seed: int) -> None:
    rng = np.random.default_rng(seed)
    img = rng.random((16, 16, 3))
    res.check("psnr of mse 0.01", math.isclose(psnr(np.full((4, 4, 3), 0.1), np.zeros((4, 4, 3))), 20.0, rel_tol=1e-12))
    res.check("psnr identical", psnr(img, img) == IDENTICAL)
    res.check("psnr black vs white", psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 0.0)
    res.check("ssim identical", ssim(img, img) == 1.0)
    board = (np.indices((16, 16)).sum(axis=0) % 2).astype(np.float64)
    got, ref = ssim(board, 1.0 - board), ssim_direct(board, 1.0 - board)
    res.check("ssim matches direct evaluation", abs(got - ref) <= 1e-6, f"{got!r} vs {ref!r}")
    res.check("geometric average", math.isclose(geometric_average(20.0, 0.75), math.sqrt(0.005), rel_tol=1e-12))
    res.check("geometric average of perfect", geometric_average(IDENTICAL, 1.0) == 0.0)


# --- determinism --------------------------------------------------------------


def tiny_scene(views: int = 2, size: int = 8) -> Scene:
    ring = CameraRing(count=views, width=size, height=size)
    scene = SyntheticScene(primitives=(Primitive.sphere((0.0, 0.0, 0.0), 0.8, 4.0, (0.8, 0.3, 0.2)),), cameras=ring)
    return render_views(scene)


def tiny_config(seed: int) -> Config:
    return Config(
        field=FieldConfig(l_pos=2, l_dir=1, depth=2, width=16, view_width=8, skip_layer=1),
        sampling=SamplingConfig(n_coarse=8, n_fine=8, anneal_steps=4),
        train=TrainConfig(batch_size=32, steps=6, seed=seed, checkpoint_every=0, log_every=0, lr_init=1e-2, lr_final=1e-3, warmup_steps=2),
    )


def determinism_suite(res: SuiteResult, seed: int) -> None:
    scene = tiny_scene()
    cfg = tiny_config(seed)
    with tempfile.TemporaryDirectory() as tmp:
        a = train(scene, cfg, Path(tmp) / "a")
        b = train(scene, cfg, Path(tmp) / "b")
        bytes_a, bytes_b = a.checkpoint.read_bytes(), b.checkpoint.read_bytes()
        res.check("identical checkpoints", bytes_a == bytes_b)
        res.check("identical loss logs", a.loss_log.read_bytes() == b.loss_log.read_bytes())
        ck = parse_checkpoint(bytes_a)
        res.check("checkpoint round trip", checkpoint_bytes(ck.params, ck.state, ck.config) == bytes_a)
        near, far = scene.near, scene.far
        r1 = render_image(a.params, scene.cameras[0], cfg, near=near, far=far, background=scene.background_rgb)
        r2 = render_image(ck.params, scene.cameras[0], ck.config, near=near, far=far, background=scene.background_rgb)
        res.check("render is deterministic", all(np.array_equal(x, y) for x, y in zip(r1, r2)))


# --- ablation -----------------------------------------------------------------


@dataclass(frozen=True)
class HeldOutScore:
    psnr: float
    depth_mae: float


def held_out_score(params: FieldParams, cfg: Config, scene: Scene, ids: list[int]) -> HeldOutScore:

    psnrs, maes = [], []
    for i in ids:
        rgb, depth, _ = render_image(params, scene.cameras[i], cfg, near=scene.near, far=scene.far, background=scene.background_rgb)
        p = psnr(rgb, scene.images[i])
        psnrs.append(100.0 if p == IDENTICAL else p)
        mae = depth_mae(depth, scene.depths[i], scene.accs[i])
        if mae is not None:
            maes.append(mae)
    return HeldOutScore(psnr=float(np.mean(psnrs)), depth_mae=float(np.mean(maes)) if maes else float("nan"))


def ablation_run(seed: int, out_dir: Path, *, overrides: list[str] | None = None) -> dict[str, HeldOutScore]:
    """Full objective vs. the MSE-only baseline on a 3-view synthetic scene; 5 further views held out."""

    rng = np.random.default_rng(seed)
    scene = render_views(random_scene(rng, ring=CameraRing(count=8, width=64, height=64)), name="ablation")
    train_ids = select_views(len(scene), 3, "synthetic")
    test_ids = held_out_views(len(scene), 3, "synthetic")
    scores = {}
    for variant in ("full", "mse"):
        cfg = build_config("desk", [f"train.seed={seed}", f"loss.variant={variant}", *(overrides or [])])
        result = train(scene.subset(train_ids), cfg, out_dir / variant)
        scores[variant] = held_out_score(result.params, cfg, scene, test_ids)
        logger.info("ablation %s: psnr %.2f depth mae %.4f", variant, scores[variant].psnr, scores[variant].depth_mae)
    return scores


def ablation_suite(res: SuiteResult, seed: int) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        scores = ablation_run(seed, Path(tmp))
    full, base = scores["full"], scores["mse"]
    res.check("held-out psnr within 0.5 dB of baseline", full.psnr >= base.psnr - 0.5, f"{full.psnr:.2f} vs {base.psnr:.2f}")
    res.check("held-out depth error below baseline", full.depth_mae < base.depth_mae, f"{full.depth_mae:.4f} vs {base.depth_mae:.4f}")


SUITES: dict[str, Callable[[SuiteResult, int], None]] = {
    "mixture": mixture_suite,
    "regen": regen_suite,
    "oracle": oracle_suite,
    "gradcheck": gradcheck_suite,
    "schedule": schedule_suite,
    "metrics": metrics_suite,
    "determinism": determinism_suite,
    "ablation": ablation_suite,
}
SLOW_SUITES = ("ablation",)
DEFAULT_SUITES = tuple(name for name in SUITES if name not in SLOW_SUITES)


def run_suite(name: str, seed: int = 0) -> SuiteResult:
    res = SuiteResult(name)
    t0 = time.perf_counter()
    try:
        SUITES[name](res, seed)
    except (RayMixturesError, OSError, ArithmeticError) as e:
        res.check("completed", False, f"{type(e).__name__}: {e}")
    res.seconds = time.perf_counter() - t0
    logger.info("suite %s: %s in %.1fs", name, "ok" if res.passed else "FAILED", res.seconds)
    return res


def expand_suites(names: list[str]) -> list[str]:
    out: list[str] = []
    for n in names:
        for s in DEFAULT_SUITES if n == "all" else (n,):
            if s not in out:
                out.append(s)
    return out
