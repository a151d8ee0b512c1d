from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Scene
from .errors import DomainError, ManifestError
from .geometry import Camera, Ray, RayBatch, RaySamples, generate_rays, image_pixels, stratified_sample
from .images import atomic_write_text
from .render import BACKGROUNDS, EPS_ACC, RenderResult, background_color, composite_color, composite_depth, compute_blend_weights


logger = logging.getLogger(__name__)

# Analytic scenes of emissive, absorbing convex primitives with constant density
# and color. Along any ray the membership of every primitive is constant between
# consecutive intersection boundaries, so the emission-absorption integral is a
# sum of closed-form slabs.

KINDS = ("sphere", "box")
SMALL_X = 1e-4


@dataclass(frozen=True)
class Primitive:
    kind: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]  # sphere: (r, r, r); box: half extents
    sigma: float
    color: tuple[float, float, float]

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DomainError(f"unknown primitive kind {self.kind!r}")
        if not self.sigma >= 0:
            raise DomainError(f"primitive density must be >= 0, got {self.sigma}")
        if any(not 0.0 <= c <= 1.0 for c in self.color):
            raise DomainError(f"primitive color must lie in [0, 1], got {self.color}")
        if any(not s > 0 for s in self.size):
            raise DomainError(f"primitive is degenerate: size {self.size}")

    @classmethod
    def sphere(cls, center, radius: float, sigma: float, color) -> Primitive:
        r = float(radius)
        return cls("sphere", tuple(map(float, center)), (r, r, r), float(sigma), tuple(map(float, color)))

    @classmethod
    def box(cls, center, half_extent, sigma: float, color) -> Primitive:
        return cls("box", tuple(map(float, center)), tuple(map(float, half_extent)), float(sigma), tuple(map(float, color)))

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Entry and exit ray parameters (N,); NaN where the ray misses."""

        c = np.asarray(self.center)
        if self.kind == "sphere":
            r = self.size[0]
            oc = origins - c
            a = np.sum(dirs * dirs, axis=-1)
            b = np.sum(oc * dirs, axis=-1)
            q = np.sum(oc * oc, axis=-1) - r * r
            disc = b * b - a * q
            hit = disc > 0
            root = np.sqrt(np.where(hit, disc, 0.0))
            t0 = np.where(hit, (-b - root) / a, np.nan)
            t1 = np.where(hit, (-b + root) / a, np.nan)
            return t0, t1
        half = np.asarray(self.size)
        lo_p, hi_p = c - half, c + half
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            ta = (lo_p - origins) * inv
            tb = (hi_p - origins) * inv
        # axis-parallel rays: inside the slab the axis never bounds, outside it always misses
        flat = dirs == 0
        inside = (origins >= lo_p) & (origins <= hi_p)
        ta = np.where(flat, np.where(inside, -np.inf, np.inf), ta)
        tb = np.where(flat, np.inf, tb)
        t0 = np.max(np.minimum(ta, tb), axis=-1)
        t1 = np.min(np.maximum(ta, tb), axis=-1)
        hit = t1 > t0
        return np.where(hit, t0, np.nan), np.where(hit, t1, np.nan)

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = points - np.asarray(self.center)
        if self.kind == "sphere":
            return np.sum(d * d, axis=-1) < self.size[0] ** 2
        return np.all(np.abs(d) < np.asarray(self.size), axis=-1)

    def to_json(self) -> dict:
        obj: dict = {"kind": self.kind, "center": list(self.center), "sigma": self.sigma, "color": list(self.color)}
        if self.kind == "sphere":
            obj["radius"] = self.size[0]
        else:
            obj["half_extent"] = list(self.size)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> Primitive:
        kind = obj.get("kind")
        if kind == "sphere":
            return cls.sphere(obj["center"], obj["radius"], obj["sigma"], obj["color"])
        if kind == "box":
            return cls.box(obj["center"], obj["half_extent"], obj["sigma"], obj["color"])
        raise DomainError(f"unknown primitive kind {kind!r}")


@dataclass(frozen=True)
class CameraRing:
    """Cameras evenly spaced on a circle about the z axis, looking at the origin."""

    count: int = 8
    radius: float = 4.0
    elevation: float = 0.5  # radians above the xy plane
    width: int = 64
    height: int = 64
    camera_angle_x: float = 0.6911112070083618


@dataclass(frozen=True)
class SyntheticScene:
    primitives: tuple[Primitive, ...] = ()
    near: float = 2.0
    far: float = 6.0
    background: str = "black"
    cameras: CameraRing = field(default_factory=CameraRing)

    def __post_init__(self) -> None:
        if not 0 <= self.near < self.far:
            raise DomainError(f"need 0 <= near < far, got near={self.near} far={self.far}")
        if self.background not in BACKGROUNDS:
            raise DomainError(f"unknown background {self.background!r}")

    def to_json(self) -> dict:
        ring = self.cameras
        return {
            "primitives": [p.to_json() for p in self.primitives],
            "near": self.near,
            "far": self.far,
            "background": self.background,
            "cameras": {
                "count": ring.count,
                "radius": ring.radius,
                "elevation": ring.elevation,
                "width": ring.width,
                "height": ring.height,
                "camera_angle_x": ring.camera_angle_x,
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> SyntheticScene:
        try:
            prims = tuple(Primitive.from_json(p) for p in obj.get("primitives", []))
            ring = CameraRing(**obj.get("cameras", {}))
            return cls(
                primitives=prims,
                near=float(obj.get("near", 2.0)),
                far=float(obj.get("far", 6.0)),
                background=str(obj.get("background", "black")),
                cameras=ring,
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"bad scene descriptor: {e}") from None


def read_descriptor(path: Path) -> SyntheticScene:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"scene descriptor {path} does not exist") from None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot parse scene descriptor {path}: {e}") from None
    if not isinstance(obj, dict):
        raise ManifestError("scene descriptor must be a JSON object")
    return SyntheticScene.from_json(obj)


def write_descriptor(path: Path, scene: SyntheticScene) -> None:
    atomic_write_text(path, json.dumps(scene.to_json(), indent=2) + "\n")


def look_at(position: np.ndarray, target: np.ndarray | None = None, up: np.ndarray | None = None) -> np.ndarray:
    """3x4 camera-to-world pose with the camera's -z axis pointing at `target`."""

    pos = np.asarray(position, dtype=np.float64)
    tgt = np.zeros(3) if target is None else np.asarray(target, dtype=np.float64)
    world_up = np.array([0.0, 0.0, 1.0]) if up is None else np.asarray(up, dtype=np.float64)
    back = pos - tgt
    back = back / np.linalg.norm(back)
    right = np.cross(world_up, back)
    if np.linalg.norm(right) < 1e-9:
        raise DomainError("camera looks along the up vector")
    right = right / np.linalg.norm(right)
    cam_up = np.cross(back, right)
    return np.concatenate([np.stack([right, cam_up, back], axis=-1), pos[:, None]], axis=-1)


def ring_cameras(ring: CameraRing) -> list[Camera]:
    if ring.count < 1:
        raise DomainError(f"camera count must be >= 1, got {ring.count}")
    cams = []
    for i in range(ring.count):
        theta = 2.0 * math.pi * i / ring.count
        pos = ring.radius * np.array(
            [math.cos(theta) * math.cos(ring.elevation), math.sin(theta) * math.cos(ring.elevation), math.sin(ring.elevation)]
        )
        cams.append(Camera.from_fov(width=ring.width, height=ring.height, camera_angle_x=ring.camera_angle_x, pose=look_at(pos)))
    return cams


def random_scene(
    rng: np.random.Generator,
    *,
    n_primitives: int | None = None,
    ring: CameraRing | None = None,
    background: str = "black",
) -> SyntheticScene:
    """2-3 colored spheres near the origin, densities in [2, 8]."""

    n = int(rng.integers(2, 4)) if n_primitives is None else n_primitives
    prims = []
    for _ in range(n):
        center = rng.uniform(-0.8, 0.8, size=3)
        radius = rng.uniform(0.3, 0.7)
        sigma = rng.uniform(2.0, 8.0)
        color = rng.uniform(0.1, 0.9, size=3)
        prims.append(Primitive.sphere(center, radius, sigma, color))
    return SyntheticScene(primitives=tuple(prims), near=2.0, far=6.0, background=background, cameras=ring or CameraRing())


def scene_field(scene: SyntheticScene, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Density (...,) and color (..., 3) at `points`.

    Overlapping primitives add densities and emit their density-weighted mean color.
    """

    pts = np.asarray(points, dtype=np.float64)
    sigma = np.zeros(pts.shape[:-1])
    weighted = np.zeros(pts.shape[:-1] + (3,))
    for p in scene.primitives:
        inside = p.contains(pts)
        sigma = sigma + np.where(inside, p.sigma, 0.0)
        weighted = weighted + np.where(inside[..., None], p.sigma * np.asarray(p.color), 0.0)
    color = np.where(sigma[..., None] > 0, weighted / np.where(sigma > 0, sigma, 1.0)[..., None], 0.0)
    return sigma, color


def _boundaries(scene: SyntheticScene, rays: RayBatch) -> np.ndarray:
    """Sorted (N, 2P + 2) segment boundaries clipped to each ray's bounds."""

    cols = [rays.t_near]
    for p in scene.primitives:
        t0, t1 = p.intersect(rays.origins, rays.dirs)
        cols.extend([np.where(np.isnan(t0), rays.t_far, t0), np.where(np.isnan(t1), rays.t_far, t1)])
    cols.append(rays.t_far)
    t = np.stack(cols, axis=-1)
    t = np.clip(t, rays.t_near[:, None], rays.t_far[:, None])
    return np.sort(t, axis=-1)


def _slab_depth(x: np.ndarray, length: np.ndarray, start: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Integral of sigma exp(-sigma u) (start + u) over a slab, per unit entry transmittance."""

    xs = np.where(x < SMALL_X, 1.0, x)
    h_big = -np.expm1(-xs) / xs - np.exp(-xs)
    h_small = x / 2.0 - x**2 / 3.0 + x**3 / 8.0
    h = np.where(x < SMALL_X, h_small, h_big)
    return start * alpha + length * h


def render_synthetic_gt(scene: SyntheticScene, rays: RayBatch) -> RenderResult:
    """Exact emission-absorption render of `rays`: color, expected termination distance, opacity.

    Depth is normalised by opacity like `composite_depth`, and 0 where nothing is hit.
    """

    t = _boundaries(scene, rays)
    lo, hi = t[:, :-1], t[:, 1:]
    norm = rays.dir_norm[:, None]
    mids = rays.origins[:, None, :] + (0.5 * (lo + hi))[..., None] * rays.dirs[:, None, :]
    sigma, color = scene_field(scene, mids)
    length = (hi - lo) * norm
    x = sigma * length
    alpha = -np.expm1(-x)
    trans = np.exp(-(np.cumsum(x, axis=-1) - x))
    w = trans * alpha
    acc = w.sum(axis=-1)
    rgb = np.sum(w[..., None] * color, axis=-2) + (1.0 - acc)[:, None] * background_color(scene.background)
    num = np.sum(trans * _slab_depth(x, length, lo * norm, alpha), axis=-1)
    depth = num / np.maximum(acc, EPS_ACC)
    return RenderResult(rgb=rgb, depth=depth, acc=acc)


def segment_samples(scene: SyntheticScene, ray: Ray) -> tuple[RayBatch, RaySamples]:
    """One sample per constant-density segment of `ray`, for the numeric renderer."""

    batch = RayBatch.from_rays([ray])
    t = np.unique(_boundaries(scene, batch)[0])
    t_mid = 0.5 * (t[:-1] + t[1:])
    delta = np.diff(t) * batch.dir_norm[0]
    return batch, RaySamples(t_mid=t_mid[None], t_edges=t[None], delta=delta[None])


def render_with_samples(scene: SyntheticScene, rays: RayBatch, samples: RaySamples) -> RenderResult:
    """Quadrature render of the analytic field through the regular compositing path."""

    sigma, color = scene_field(scene, samples.points(rays))
    bw = compute_blend_weights(sigma, samples.delta)
    return RenderResult(
        rgb=composite_color(bw, color, background_color(scene.background)),
        depth=composite_depth(bw, samples.t_mid, rays.dir_norm),
        acc=bw.acc,
    )


def render_scene_numeric(scene: SyntheticScene, rays: RayBatch, m: int) -> RenderResult:
    """Render with `m` bin-centered samples per ray."""

    return render_with_samples(scene, rays, stratified_sample(rays, m, jitter=False))


def render_views(scene: SyntheticScene, *, name: str = "synthetic") -> Scene:
    """Exact images, depth maps and opacity maps for every ring camera, as a loaded scene."""

    images, depths, accs = [], [], []
    cameras = ring_cameras(scene.cameras)
    for cam in cameras:
        rays = generate_rays(cam, image_pixels(cam), t_near=scene.near, t_far=scene.far)
        res = render_synthetic_gt(scene, rays)
        images.append(res.rgb.reshape(cam.height, cam.width, 3))
        depths.append(res.depth.reshape(cam.height, cam.width))
        accs.append(res.acc.reshape(cam.height, cam.width))
    return Scene(
        name=name,
        images=images,
        cameras=cameras,
        near=scene.near,
        far=scene.far,
        background=scene.background,
        frame_paths=[f"r_{i:03d}.png" for i in range(len(cameras))],
        depths=depths,
        accs=accs,
    )
