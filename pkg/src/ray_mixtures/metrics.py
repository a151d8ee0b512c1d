from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .errors import DomainError
from .images import atomic_write_text


IDENTICAL = "identical"

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

EVAL_COLUMNS = ("scene", "view", "psnr", "ssim", "avg_err", "depth_mae")
EVAL_HEADER = "# avg_err is the geometric mean of 10^(-psnr/10) and sqrt(1 - ssim); LPIPS is not included"


@dataclass(frozen=True)
class MetricReport:
    psnr: float | str
    ssim: float
    avg_err: float
    depth_mae: float | None = None

    def to_json(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "avg_err": self.avg_err, "depth_mae": self.depth_mae}


def _pair(img: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise DomainError("empty image")
    return a, b


def psnr(img: np.ndarray, gt: np.ndarray) -> float | str:
    """Peak signal-to-noise ratio in dB for unit-range images; IDENTICAL when they match exactly."""

    a, b = _pair(img, gt)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return IDENTICAL
    return -10.0 * math.log10(mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return np.outer(g, g)


def grayscale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=-1) if img.ndim == 3 else img


def ssim(img: np.ndarray, gt: np.ndarray) -> float:
    """Mean windowed SSIM of the channel-mean grayscale images (valid windows only)."""

    a, b = _pair(grayscale(img), grayscale(gt))
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise DomainError(f"image {a.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = gaussian_window()

    def filt(x: np.ndarray) -> np.ndarray:
        return convolve2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def geometric_average(psnr_db: float | str, ssim_value: float) -> float:
    """Geometric mean of 10^(-psnr/10) and sqrt(1 - ssim)."""

    if ssim_value > 1.0:
        raise DomainError(f"ssim must be <= 1, got {ssim_value}")
    mse = 0.0 if psnr_db == IDENTICAL else 10.0 ** (-float(psnr_db) / 10.0)
    return math.sqrt(mse * math.sqrt(1.0 - ssim_value))


def depth_mae(depth: np.ndarray, gt_depth: np.ndarray, gt_acc: np.ndarray, *, min_opacity: float = 0.5) -> float | None:
    """Mean absolute depth error over pixels whose reference opacity exceeds `min_opacity`."""

    d, g = _pair(depth, gt_depth)
    mask = np.asarray(gt_acc) > min_opacity
    if mask.shape != d.shape:
        raise DomainError(f"opacity map {mask.shape} does not match depth {d.shape}")
    if not mask.any():
        return None
    return float(np.mean(np.abs(d[mask] - g[mask])))


def evaluate_view(img: np.ndarray, gt: np.ndarray, *, depth: np.ndarray | None = None, gt_depth: np.ndarray | None = None, gt_acc: np.ndarray | None = None) -> MetricReport:
    p = psnr(img, gt)
    s = ssim(img, gt)
    mae = None
    if depth is not None and gt_depth is not None and gt_acc is not None:
        mae = depth_mae(depth, gt_depth, gt_acc)
    return MetricReport(psnr=p, ssim=s, avg_err=geometric_average(p, s), depth_mae=mae)


def eval_csv_text(scene: str, rows: list[tuple[int, MetricReport]]) -> str:
    buf = io.StringIO()
    buf.write(EVAL_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for view, rep in rows:
        w.writerow([scene, view, rep.psnr, repr(rep.ssim), repr(rep.avg_err), "" if rep.depth_mae is None else repr(rep.depth_mae)])
    return buf.getvalue()


def write_eval_csv(path: Path, scene: str, rows: list[tuple[int, MetricReport]]) -> None:
    atomic_write_text(Path(path), eval_csv_text(scene, rows))
