from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FrameError, ManifestError
from .geometry import Camera
from .images import atomic_write_text, image_size, read_rgb_png, read_u16_png, U16_MAX
from .render import BACKGROUNDS, background_color


logger = logging.getLogger(__name__)

# Manifest layout follows the common synthetic-scene transforms JSON:
#   camera_angle_x: horizontal field of view (radians), shared by all frames
#   frames[].file_path: image path relative to the manifest (".png" appended if missing)
#   frames[].transform_matrix: 4x4 (or 3x4) camera-to-world, camera looks down -z
# plus scene-level near / far / background and optional oracle maps:
#   frames[].depth_path, frames[].acc_path: 16-bit PNGs; depth_scale converts depth units

PROTOCOLS = ("synthetic", "forward")
HOLDOUT_EVERY = 8


@dataclass(frozen=True)
class ManifestFrame:
    file_path: str
    transform_matrix: list[list[float]]
    depth_path: str | None = None
    acc_path: str | None = None


@dataclass(frozen=True)
class SceneManifest:
    frames: list[ManifestFrame]
    camera_angle_x: float
    near: float
    far: float
    background: str = "black"
    depth_scale: float | None = None

    def to_json(self) -> dict:
        obj: dict = {
            "camera_angle_x": self.camera_angle_x,
            "near": self.near,
            "far": self.far,
            "background": self.background,
            "frames": [],
        }
        if self.depth_scale is not None:
            obj["depth_scale"] = self.depth_scale
        for fr in self.frames:
            item = {"file_path": fr.file_path, "transform_matrix": fr.transform_matrix}
            if fr.depth_path:
                item["depth_path"] = fr.depth_path
            if fr.acc_path:
                item["acc_path"] = fr.acc_path
            obj["frames"].append(item)
        return obj


@dataclass
class Scene:
    name: str
    images: list[np.ndarray]
    cameras: list[Camera]
    near: float
    far: float
    background: str
    frame_paths: list[str]
    depths: list[np.ndarray | None] = field(default_factory=list)
    accs: list[np.ndarray | None] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def background_rgb(self) -> np.ndarray:
        return background_color(self.background)

    def subset(self, ids: list[int]) -> Scene:
        return Scene(
            name=self.name,
            images=[self.images[i] for i in ids],
            cameras=[self.cameras[i] for i in ids],
            near=self.near,
            far=self.far,
            background=self.background,
            frame_paths=[self.frame_paths[i] for i in ids],
            depths=[self.depths[i] for i in ids] if self.depths else [],
            accs=[self.accs[i] for i in ids] if self.accs else [],
        )


def _as_float(obj: dict, key: str) -> float:
    try:
        v = float(obj[key])
    except KeyError:
        raise ManifestError(f"manifest is missing {key!r}") from None
    except (TypeError, ValueError):
        raise ManifestError(f"manifest {key!r} is not a number") from None
    if not math.isfinite(v):
        raise ManifestError(f"manifest {key!r} is not finite")
    return v


def parse_manifest(obj: dict) -> SceneManifest:
    if not isinstance(obj, dict):
        raise ManifestError("manifest must be a JSON object")
    fov = _as_float(obj, "camera_angle_x")
    if not 0 < fov < math.pi:
        raise ManifestError(f"camera_angle_x must lie in (0, pi), got {fov}")
    near = _as_float(obj, "near")
    far = _as_float(obj, "far")
    if not 0 <= near < far:
        raise ManifestError(f"need 0 <= near < far, got near={near} far={far}")
    background = str(obj.get("background", "black"))
    if background not in BACKGROUNDS:
        raise ManifestError(f"background must be one of {', '.join(BACKGROUNDS)}, got {background!r}")
    depth_scale = obj.get("depth_scale")
    if depth_scale is not None:
        depth_scale = _as_float(obj, "depth_scale")

    raw_frames = obj.get("frames")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise ManifestError("manifest has no frames")
    frames: list[ManifestFrame] = []
    for i, fr in enumerate(raw_frames):
        if not isinstance(fr, dict) or "file_path" not in fr or "transform_matrix" not in fr:
            raise FrameError(i, "needs file_path and transform_matrix")
        frames.append(
            ManifestFrame(
                file_path=str(fr["file_path"]),
                transform_matrix=fr["transform_matrix"],
                depth_path=fr.get("depth_path"),
                acc_path=fr.get("acc_path"),
            )
        )
    return SceneManifest(frames=frames, camera_angle_x=fov, near=near, far=far, background=background, depth_scale=depth_scale)


def read_manifest(path: Path) -> SceneManifest:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ManifestError(f"manifest {path} does not exist") from None
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot parse manifest {path}: {e}") from None
    return parse_manifest(obj)


def write_manifest(path: Path, manifest: SceneManifest) -> None:
    atomic_write_text(path, json.dumps(manifest.to_json(), indent=2) + "\n")


def _frame_pose(i: int, frame: ManifestFrame) -> np.ndarray:
    try:
        pose = np.asarray(frame.transform_matrix, dtype=np.float64)
    except (TypeError, ValueError):
        raise FrameError(i, "transform_matrix is not numeric") from None
    if pose.shape not in ((4, 4), (3, 4)):
        raise FrameError(i, f"transform_matrix must be 4x4 or 3x4, got {pose.shape}")
    if not np.all(np.isfinite(pose)):
        raise FrameError(i, "transform_matrix is not finite")
    return pose[:3]


def _resolve(root: Path, rel: str, i: int, what: str) -> Path:
    p = root / rel
    if not p.suffix:
        p = p.with_suffix(".png")
    if not p.is_file():
        raise FrameError(i, f"{what} {p} does not exist")
    return p


def load_scene(manifest_path: Path, *, load_oracle: bool = True) -> Scene:
    """Images (float RGB in [0, 1]) and per-frame cameras for every manifest frame."""

    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    bkgd = background_color(manifest.background)

    images: list[np.ndarray] = []
    cameras: list[Camera] = []
    paths: list[str] = []
    depths: list[np.ndarray | None] = []
    accs: list[np.ndarray | None] = []
    size: tuple[int, int] | None = None

    for i, fr in enumerate(manifest.frames):
        pose = _frame_pose(i, fr)
        img_path = _resolve(root, fr.file_path, i, "image")
        w, h = image_size(img_path)
        if size is None:
            size = (w, h)
        elif (w, h) != size:
            raise FrameError(i, f"image is {w}x{h}, expected {size[0]}x{size[1]}")
        try:
            cam = Camera.from_fov(width=w, height=h, camera_angle_x=manifest.camera_angle_x, pose=pose)
        except DomainError as e:
            raise FrameError(i, str(e)) from None
        images.append(read_rgb_png(img_path, bkgd))
        cameras.append(cam)
        paths.append(str(img_path))

        depth = acc = None
        if load_oracle and fr.depth_path and manifest.depth_scale is not None:
            depth = read_u16_png(_resolve(root, fr.depth_path, i, "depth map")) * manifest.depth_scale
            if depth.shape != (h, w):
                raise FrameError(i, f"depth map is {depth.shape}, expected {(h, w)}")
        if load_oracle and fr.acc_path:
            acc = read_u16_png(_resolve(root, fr.acc_path, i, "opacity map")) / U16_MAX
            if acc.shape != (h, w):
                raise FrameError(i, f"opacity map is {acc.shape}, expected {(h, w)}")
        depths.append(depth)
        accs.append(acc)

    logger.debug("loaded %d frames from %s", len(images), manifest_path)
    return Scene(
        name=manifest_path.parent.name or manifest_path.stem,
        images=images,
        cameras=cameras,
        near=manifest.near,
        far=manifest.far,
        background=manifest.background,
        frame_paths=paths,
        depths=depths,
        accs=accs,
    )


def select_views(n_frames: int, k: int, protocol: str = "synthetic") -> list[int]:
    """Training frame ids.

    synthetic: the first k frames. forward: every 8th frame is held out and k frames
    are chosen evenly from the remaining pool.
    """

    if protocol not in PROTOCOLS:
        raise DomainError(f"unknown view protocol {protocol!r}; expected one of {', '.join(PROTOCOLS)}")
    if k < 1:
        raise DomainError(f"need at least one training view, got {k}")
    if protocol == "synthetic":
        if k > n_frames:
            raise DomainError(f"asked for {k} views from {n_frames} frames")
        return list(range(k))
    pool = [i for i in range(n_frames) if i % HOLDOUT_EVERY != 0]
    if k > len(pool):
        raise DomainError(f"asked for {k} views from a pool of {len(pool)}")
    picks = np.round(np.linspace(0, len(pool) - 1, k)).astype(int)
    return [pool[j] for j in picks]


def held_out_views(n_frames: int, k: int, protocol: str = "synthetic") -> list[int]:
    if protocol == "forward":
        return [i for i in range(n_frames) if i % HOLDOUT_EVERY == 0]
    train = set(select_views(n_frames, k, protocol))
    return [i for i in range(n_frames) if i not in train]
