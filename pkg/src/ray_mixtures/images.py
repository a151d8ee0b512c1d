from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


U16_MAX = 65535


def ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create directory {path}: {e}") from None
    return path


def _discard(tmp: str) -> None:
    try:
        os.unlink(tmp)
    except OSError:
        pass


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via a temp file in the target directory and rename over `path`."""
    ensure_dir(path.parent)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from None
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        _discard(tmp)
        raise DataError(f"cannot write {path}: {e}") from None
    except BaseException:
        _discard(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def to_u8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def rgb_png_bytes(rgb: np.ndarray) -> bytes:
    """8-bit RGB PNG of an (H, W, 3) image with values in [0, 1]."""
    return _png_bytes(Image.fromarray(to_u8(rgb)))


def u16_png_bytes(values: np.ndarray, scale: float) -> bytes:
    """16-bit grayscale PNG storing round(values / scale)."""
    q = np.clip(np.round(np.asarray(values, dtype=np.float64) / scale), 0, U16_MAX).astype(np.uint16)
    return _png_bytes(Image.fromarray(q))


def write_rgb_png(path: Path, rgb: np.ndarray) -> None:
    atomic_write_bytes(path, rgb_png_bytes(rgb))


def write_u16_png(path: Path, values: np.ndarray, scale: float) -> None:
    atomic_write_bytes(path, u16_png_bytes(values, scale))


def read_rgb_png(path: Path, background: np.ndarray) -> np.ndarray:
    """Float RGB in [0, 1]; an alpha channel is composited over `background`."""
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode == "RGBA" or img.mode == "LA" or (img.mode == "P" and "transparency" in img.info):
                arr = np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0
                alpha = arr[..., 3:4]
                return arr[..., :3] * alpha + (1.0 - alpha) * background
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from None


def read_u16_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            return np.asarray(img).astype(np.float64)
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from None


def image_size(path: Path) -> tuple[int, int]:
    """(width, height) without decoding pixels."""
    try:
        with Image.open(path) as img:
            return img.size
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from None
