"""PSNR, Gaussian-windowed SSIM, SSIM maps and mean/std reporting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PSNR_SENTINEL = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def psnr(pred, target, max_val: float = 1.0) -> float:
    pred, target = _check_pair(pred, target)
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(PSNR_SENTINEL, 10.0 * np.log10(max_val**2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-d Gaussian taps; the 2-d window is their outer product."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of a 2-d image."""
    n = len(taps)
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=1) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=0) @ taps


def _ssim_terms(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    taps = gaussian_window()
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    mx, my = _filter(x, taps), _filter(y, taps)
    vx = _filter(x * x, taps) - mx * mx
    vy = _filter(y * y, taps) - my * my
    cov = _filter(x * y, taps) - mx * my
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return num / den


def _check_window(x: np.ndarray) -> None:
    if x.ndim != 2:
        raise ValueError(f"SSIM works on 2-d slices, got shape {x.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")


def ssim(pred, target) -> float:
    """Mean SSIM over positions where the window lies fully inside the image."""
    x, y = _check_pair(pred, target)
    _check_window(x)
    return float(np.mean(_ssim_terms(x, y)))


def ssim_map(pred, target) -> np.ndarray:
    """Per-pixel local SSIM, same extents as the input (symmetric border reflection)."""
    x, y = _check_pair(pred, target)
    _check_window(x)
    r = SSIM_WINDOW // 2
    pad = ((r, r), (r, r))
    return _ssim_terms(np.pad(x, pad, mode="symmetric"), np.pad(y, pad, mode="symmetric"))


def aggregate(values) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty sample list")
    return float(arr.mean()), float(arr.std())


def fmt6(x: float) -> str:
    return f"{x:.6g}"


@dataclass
class SampleRecord:
    patient_id: str
    slice_index: int
    psnr_db: float
    ssim: float


@dataclass
class MetricsReport:
    method: str
    k: int
    records: list[SampleRecord] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.records)

    @property
    def psnr(self) -> tuple[float, float]:
        return aggregate(r.psnr_db for r in self.records)

    @property
    def ssim(self) -> tuple[float, float]:
        return aggregate(r.ssim for r in self.records)

    @property
    def psnr_mean(self) -> float:
        return self.psnr[0]

    @property
    def ssim_mean(self) -> float:
        return self.ssim[0]

    def summary_line(self) -> str:
        (pm, ps), (sm, ss) = self.psnr, self.ssim
        return f"{self.method} k={self.k} PSNR {pm:.2f}±{ps:.2f} SSIM {sm:.4f}±{ss:.4f}"

    def header_line(self) -> str:
        return (
            f"# ssim window={SSIM_WINDOW} sigma={SSIM_SIGMA} K1={SSIM_K1} K2={SSIM_K2} L={DATA_RANGE}; "
            f"psnr max=1.0 sentinel={PSNR_SENTINEL:g}; n={self.n_samples}"
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "k", "patient_id", "slice_index", "psnr_db", "ssim"])
        for r in self.records:
            w.writerow([self.method, self.k, r.patient_id, r.slice_index, fmt6(r.psnr_db), fmt6(r.ssim)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), newline="")


def score_pair(pred, target) -> tuple[float, float]:
    return psnr(pred, target), ssim(pred, target)


def write_graymap(ssim_values: np.ndarray, path) -> None:
    """8-bit binary PGM (P5) with pixel = round(255 * clamp(ssim, 0, 1))."""
    arr = np.asarray(ssim_values, dtype=np.float64)
    pix = np.round(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes())


def read_graymap(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a P5 graymap")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def write_map_csv(values: np.ndarray, path) -> None:
    lines = [",".join(fmt6(v) for v in row) for row in np.asarray(values)]
    Path(path).write_text("\n".join(lines) + "\n", newline="")
