from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


logger = logging.getLogger(__name__)

# Pinhole camera, right/up/backward camera frame (camera looks down -z), pixel
# centers at +0.5. Ray directions are NOT normalised: the point at t = 1 lies on
# the z_cam = -1 plane, so |dir| is the per-pixel depth scale used as the depth target.

ORTHONORMAL_TOL = 1e-6
DEFAULT_WEIGHT_FLOOR = 1e-5


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    focal: float
    principal_point: tuple[float, float]
    pose: np.ndarray  # 3x4 camera-to-world

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise DomainError(f"camera size must be >= 1, got {self.width}x{self.height}")
        if not self.focal > 0:
            raise DomainError(f"focal must be > 0, got {self.focal}")
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape == (4, 4):
            pose = pose[:3]
        if pose.shape != (3, 4):
            raise DomainError(f"pose must be 3x4, got {pose.shape}")
        if not np.all(np.isfinite(pose)):
            raise DomainError("pose is not finite")
        rot = pose[:, :3]
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHONORMAL_TOL:
            raise DomainError("pose rotation is not orthonormal")
        object.__setattr__(self, "pose", pose)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:, :3]

    @property
    def origin(self) -> np.ndarray:
        return self.pose[:, 3]

    @classmethod
    def from_fov(cls, *, width: int, height: int, camera_angle_x: float, pose: np.ndarray) -> Camera:
        if not 0 < camera_angle_x < np.pi:
            raise DomainError(f"camera_angle_x must lie in (0, pi), got {camera_angle_x}")
        focal = width / (2.0 * np.tan(0.5 * camera_angle_x))
        return cls(width=width, height=height, focal=float(focal), principal_point=(width / 2.0, height / 2.0), pose=pose)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    dir: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self) -> None:
        if not np.linalg.norm(self.dir) > 0:
            raise DomainError("ray direction has zero length")
        if not self.t_near < self.t_far:
            raise DomainError(f"t_near {self.t_near} must be < t_far {self.t_far}")


@dataclass(frozen=True)
class RayBatch:
    """N rays stored column-wise; the vectorised form of Ray."""

    origins: np.ndarray  # (N, 3)
    dirs: np.ndarray  # (N, 3), unnormalised
    t_near: np.ndarray  # (N,)
    t_far: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.origins.shape[0]

    @property
    def dir_norm(self) -> np.ndarray:
        return np.linalg.norm(self.dirs, axis=-1)

    @property
    def view_dirs(self) -> np.ndarray:
        return self.dirs / self.dir_norm[:, None]

    @classmethod
    def from_rays(cls, rays: list[Ray]) -> RayBatch:
        return cls(
            origins=np.stack([r.origin for r in rays]),
            dirs=np.stack([r.dir for r in rays]),
            t_near=np.array([r.t_near for r in rays], dtype=np.float64),
            t_far=np.array([r.t_far for r in rays], dtype=np.float64),
        )

    def ray(self, i: int) -> Ray:
        return Ray(origin=self.origins[i], dir=self.dirs[i], t_near=float(self.t_near[i]), t_far=float(self.t_far[i]))

    def with_bounds(self, t_near: np.ndarray, t_far: np.ndarray) -> RayBatch:
        return RayBatch(origins=self.origins, dirs=self.dirs, t_near=t_near, t_far=t_far)

    def take(self, idx: np.ndarray | slice) -> RayBatch:
        return RayBatch(origins=self.origins[idx], dirs=self.dirs[idx], t_near=self.t_near[idx], t_far=self.t_far[idx])


@dataclass(frozen=True)
class RaySamples:
    """Sorted samples along N rays: t_mid (N, M), t_edges (N, M+1), delta (N, M)."""

    t_mid: np.ndarray
    t_edges: np.ndarray
    delta: np.ndarray

    @property
    def count(self) -> int:
        return self.t_mid.shape[-1]

    def points(self, rays: RayBatch) -> np.ndarray:
        return rays.origins[:, None, :] + self.t_mid[..., None] * rays.dirs[:, None, :]


def generate_rays(camera: Camera, pixels: np.ndarray, *, t_near: float, t_far: float) -> RayBatch:
    """Rays through continuous pixel coordinates `pixels` (N, 2) as (u, v)."""

    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    u, v = px[:, 0], px[:, 1]
    if np.any((u < 0) | (u >= camera.width) | (v < 0) | (v >= camera.height)):
        raise DomainError(f"pixel outside the {camera.width}x{camera.height} image")
    cx, cy = camera.principal_point
    cam_dirs = np.stack(
        [(u + 0.5 - cx) / camera.focal, -(v + 0.5 - cy) / camera.focal, -np.ones_like(u)],
        axis=-1,
    )
    dirs = cam_dirs @ camera.rotation.T
    n = px.shape[0]
    return RayBatch(
        origins=np.broadcast_to(camera.origin, (n, 3)).copy(),
        dirs=dirs,
        t_near=np.full(n, float(t_near)),
        t_far=np.full(n, float(t_far)),
    )


def generate_ray(camera: Camera, pixel: tuple[float, float], *, t_near: float = 0.0, t_far: float = 1.0) -> Ray:
    return generate_rays(camera, np.array([pixel], dtype=np.float64), t_near=t_near, t_far=t_far).ray(0)


def image_pixels(camera: Camera) -> np.ndarray:
    """Integer pixel coordinates of the whole image in row-major order, (H*W, 2)."""
    v, u = np.meshgrid(np.arange(camera.height), np.arange(camera.width), indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=-1).astype(np.float64)


def _samples_from_edges(t_edges: np.ndarray, t_mid: np.ndarray, dir_norm: np.ndarray) -> RaySamples:
    delta = dir_norm[:, None] * (t_edges[:, 1:] - t_edges[:, :-1])
    return RaySamples(t_mid=t_mid, t_edges=t_edges, delta=delta)


def stratified_sample(rays: RayBatch, m: int, *, jitter: bool, rng: np.random.Generator | None = None) -> RaySamples:
    """One sample per bin of an m-way equal partition of [t_near, t_far]."""

    if m < 1:
        raise DomainError(f"sample count must be >= 1, got {m}")
    if jitter and rng is None:
        raise DomainError("jittered sampling needs a random source")
    s = np.linspace(0.0, 1.0, m + 1)
    span = (rays.t_far - rays.t_near)[:, None]
    t_edges = rays.t_near[:, None] + span * s[None, :]
    t_edges[:, -1] = rays.t_far
    lo, hi = t_edges[:, :-1], t_edges[:, 1:]
    if jitter:
        u = rng.random(lo.shape)
    else:
        u = np.full(lo.shape, 0.5)
    t_mid = lo + u * (hi - lo)
    return _samples_from_edges(t_edges, t_mid, rays.dir_norm)


def edges_from_mids(t_mid: np.ndarray, t_near: np.ndarray, t_far: np.ndarray) -> np.ndarray:
    """Bin edges for sorted samples: midpoints between neighbours, closed by the ray bounds."""
    inner = 0.5 * (t_mid[:, 1:] + t_mid[:, :-1])
    return np.concatenate([t_near[:, None], inner, t_far[:, None]], axis=-1)


def hierarchical_sample(
    rays: RayBatch,
    coarse: RaySamples,
    weights: np.ndarray,
    m_fine: int,
    *,
    rng: np.random.Generator | None = None,
    weight_floor: float = DEFAULT_WEIGHT_FLOOR,
) -> RaySamples:
    """Inverse-CDF samples from the piecewise-constant pdf ~ (weights + floor) over the coarse bins.

    Fine samples are merged with the coarse t_mid and sorted; edges of the merged
    set are recomputed from neighbour midpoints. Without `rng` the CDF is read
    at evenly spaced quantiles.
    """

    w = np.asarray(weights, dtype=np.float64)
    edges = coarse.t_edges
    if w.shape != coarse.t_mid.shape:
        raise DomainError(f"weights shape {w.shape} does not match bins {coarse.t_mid.shape}")
    if np.any(w < 0):
        raise DomainError("hierarchical sampling weights must be non-negative")
    if m_fine < 1:
        return coarse
    n, m = w.shape

    pdf = w + weight_floor
    pdf = pdf / pdf.sum(axis=-1, keepdims=True)
    cdf = np.zeros((n, m + 1))
    cdf[:, 1:] = np.cumsum(pdf, axis=-1)
    cdf[:, -1] = 1.0

    if rng is not None:
        u = np.sort(rng.random((n, m_fine)), axis=-1)
    else:
        u = np.broadcast_to((np.arange(m_fine) + 0.5) / m_fine, (n, m_fine))

    # Row-wise searchsorted on one flat array: rows are offset so they never overlap.
    offset = 2.0 * np.arange(n)[:, None]
    flat = np.searchsorted((cdf + offset).ravel(), (u + offset).ravel(), side="right").reshape(n, m_fine)
    bins = np.clip(flat - np.arange(n)[:, None] * (m + 1) - 1, 0, m - 1)

    c_lo = np.take_along_axis(cdf, bins, axis=-1)
    c_hi = np.take_along_axis(cdf, bins + 1, axis=-1)
    e_lo = np.take_along_axis(edges, bins, axis=-1)
    e_hi = np.take_along_axis(edges, bins + 1, axis=-1)
    frac = np.clip((u - c_lo) / np.maximum(c_hi - c_lo, 1e-300), 0.0, 1.0)
    t_fine = e_lo + frac * (e_hi - e_lo)

    t_mid = np.sort(np.concatenate([coarse.t_mid, t_fine], axis=-1), axis=-1)
    t_edges = edges_from_mids(t_mid, rays.t_near, rays.t_far)
    return _samples_from_edges(t_edges, t_mid, rays.dir_norm)


def anneal_bounds(rays: RayBatch, step: int, *, anneal_steps: int, start_fraction: float) -> RayBatch:
    """Scene-space annealing: grow the sampling interval linearly about its midpoint.

    At step 0 the interval is `start_fraction` of the full width; from
    `anneal_steps` on the rays are returned unchanged.
    """

    if step < 0:
        raise DomainError(f"step must be >= 0, got {step}")
    if anneal_steps <= 0 or step >= anneal_steps:
        return rays
    p = start_fraction + (1.0 - start_fraction) * (step / anneal_steps)
    mid = 0.5 * (rays.t_near + rays.t_far)
    half = 0.5 * (rays.t_far - rays.t_near) * p
    return rays.with_bounds(mid - half, mid + half)
