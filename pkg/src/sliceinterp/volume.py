"""Volumes, preprocessing, synthetic phantoms, triplet extraction and patient splits."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"SVOL1 "
MAX_EXTENT = 1 << 16


class VolumeFormatError(ValueError):
    """Base class for svol parse failures."""


class BadMagicError(VolumeFormatError):
    pass


class TruncatedVolumeError(VolumeFormatError):
    pass


class ExtentOverflowError(VolumeFormatError):
    pass


@dataclass
class Volume:
    patient_id: str
    voxels: np.ndarray  # (slices, height, width), float32
    in_plane_mm: float = 1.0
    slice_mm: float = 1.5

    def __post_init__(self):
        self.voxels = np.ascontiguousarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValueError(f"volume voxels must be 3-d (slices, height, width), got {self.voxels.shape}")

    @property
    def n_slices(self) -> int:
        return self.voxels.shape[0]

    @property
    def height(self) -> int:
        return self.voxels.shape[1]

    @property
    def width(self) -> int:
        return self.voxels.shape[2]


@dataclass(frozen=True)
class TripletSample:
    lower: np.ndarray
    upper: np.ndarray
    target: np.ndarray
    k: int
    patient_id: str
    slice_index: int


@dataclass
class SplitManifest:
    train: list[str]
    val: list[str]
    test: list[str]
    ratios: tuple[float, float, float]
    seed: int

    def split_of(self, patient_id: str) -> str:
        for name in ("train", "val", "test"):
            if patient_id in getattr(self, name):
                return name
        raise KeyError(patient_id)


@dataclass
class PhantomParams:
    height: int = 64
    width: int = 64
    n_slices: int = 40
    n_blobs: int = 6
    z_frequency: float = 2.0
    noise_sigma: float = 0.02
    seed: int = 0
    in_plane_mm: float = 1.0
    slice_mm: float = 1.5

    def __post_init__(self):
        for name in ("height", "width", "n_slices"):
            if getattr(self, name) <= 0:
                raise ValueError(f"phantom {name} must be positive")
        if self.n_blobs < 0 or self.z_frequency < 0 or self.noise_sigma < 0:
            raise ValueError("phantom n_blobs, z_frequency and noise_sigma must be non-negative")


# -- preprocessing -------------------------------------------------------------


def normalize_minmax(volume: Volume) -> Volume:
    """Rescale the whole volume (not slice by slice) to [0, 1]."""
    v = volume.voxels.astype(np.float64)
    lo, hi = v.min(), v.max()
    if hi == lo:
        warnings.warn(f"volume {volume.patient_id!r} is constant; normalized to zeros", RuntimeWarning)
        out = np.zeros_like(v)
    else:
        out = (v - lo) / (hi - lo)
    return Volume(volume.patient_id, out.astype(np.float32), volume.in_plane_mm, volume.slice_mm)


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # pixel centres at (j + 0.5) / n, clamped at the borders
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"target extents must be positive, got {out_h}x{out_w}")
    image = np.asarray(image, dtype=np.float64)
    if min(image.shape) < 2:
        raise ValueError(f"source extents must be >= 2, got {image.shape}")
    r0, r1, fr = _bilinear_axis(image.shape[0], out_h)
    c0, c1, fc = _bilinear_axis(image.shape[1], out_w)
    top = image[r0][:, c0] * (1 - fc) + image[r0][:, c1] * fc
    bottom = image[r1][:, c0] * (1 - fc) + image[r1][:, c1] * fc
    return top * (1 - fr[:, None]) + bottom * fr[:, None]


def resize_volume(volume: Volume, out_h: int, out_w: int) -> Volume:
    scale = volume.height / out_h
    slices = np.stack([resize_bilinear(s, out_h, out_w) for s in volume.voxels])
    return Volume(volume.patient_id, slices, volume.in_plane_mm * scale, volume.slice_mm)


# -- phantoms ------------------------------------------------------------------


def phantom_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def generate_phantom(params: PhantomParams, patient_id: str | None = None) -> Volume:
    """Soft-edged elliptical structures whose centres and radii oscillate along z.

    ``z_frequency`` counts oscillation cycles over the stack; at 0 the cross
    sections are constant in z apart from a slow axial envelope.
    """
    rng = phantom_rng(params.seed)
    h, w, n = params.height, params.width, params.n_slices
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    z = np.arange(n, dtype=np.float64)
    vox = np.zeros((n, h, w))
    size = min(h, w)

    for _ in range(params.n_blobs):
        cx, cy = rng.uniform(0.25, 0.75) * w, rng.uniform(0.25, 0.75) * h
        rx, ry = rng.uniform(0.08, 0.22, size=2) * size
        amp = rng.uniform(0.3, 1.0)
        drift = rng.uniform(0.03, 0.09, size=2) * size
        swell = rng.uniform(0.15, 0.35)
        freq = params.z_frequency * rng.uniform(0.8, 1.25)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        zc, zr = rng.uniform(0.2, 0.8) * n, rng.uniform(0.6, 1.2) * n
        edge = rng.uniform(0.06, 0.12)

        theta = 2 * np.pi * freq * z / n
        cx_z = cx + drift[0] * np.sin(theta + phase[0])
        cy_z = cy + drift[1] * np.sin(theta + phase[1])
        scale_z = 1.0 + swell * np.sin(theta + phase[2])
        envelope = np.exp(-(((z - zc) / zr) ** 2))
        for s in range(n):
            d = np.sqrt(((xx - cx_z[s]) / (rx * scale_z[s])) ** 2 + ((yy - cy_z[s]) / (ry * scale_z[s])) ** 2)
            vox[s] += amp * envelope[s] / (1.0 + np.exp(-(1.0 - d) / edge))

    if params.noise_sigma > 0:
        vox += rng.normal(0.0, params.noise_sigma, size=vox.shape)
    pid = patient_id if patient_id is not None else f"phantom-{params.seed}"
    raw = Volume(pid, vox.astype(np.float32), params.in_plane_mm, params.slice_mm)
    return normalize_minmax(raw)


def phantom_cohort(n_volumes: int, params: PhantomParams, master_seed: int) -> list[Volume]:
    """``n_volumes`` phantoms with per-volume seeds derived from ``master_seed``."""
    seeds = np.random.SeedSequence(master_seed).generate_state(n_volumes)
    vols = []
    for i, s in enumerate(seeds):
        p = PhantomParams(**{**params.__dict__, "seed": int(s)})
        vols.append(generate_phantom(p, patient_id=f"P{i:03d}"))
    return vols


# -- triplets and splits ---------------------------------------------------------


def extract_triplets(volume: Volume, k: int) -> list[TripletSample]:
    if k < 1:
        raise ValueError(f"gap k must be >= 1, got {k}")
    if volume.n_slices < 2 * k + 1:
        warnings.warn(f"{volume.patient_id}: {volume.n_slices} slices cannot hold a gap-{k} triplet", RuntimeWarning)
        return []
    v = volume.voxels
    return [TripletSample(v[i - k], v[i + k], v[i], k, volume.patient_id, i) for i in range(k, volume.n_slices - k)]


def make_splits(patient_ids, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> SplitManifest:
    patient_ids = list(patient_ids)
    ids = sorted(set(patient_ids))
    if len(ids) != len(patient_ids):
        raise ValueError("duplicate patient ids")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    if len(ids) < 3:
        raise ValueError(f"need at least 3 patients for a train/val/test split, got {len(ids)}")
    order = [ids[i] for i in np.random.Generator(np.random.Philox(seed)).permutation(len(ids))]
    n_train = math.floor(ratios[0] * len(ids) + 1e-9)
    n_val = math.floor(ratios[1] * len(ids) + 1e-9)
    return SplitManifest(
        order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :], tuple(ratios), seed
    )


@dataclass
class TripletDataset:
    manifest: SplitManifest
    k: int
    splits: dict[str, list[TripletSample]] = field(default_factory=dict)
    excluded: list[str] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        return {name: len(items) for name, items in self.splits.items()}


def build_dataset(
    volumes: list[Volume],
    k: int,
    ratios=(0.70, 0.15, 0.15),
    seed: int = 0,
    min_slices: int = 20,
) -> TripletDataset:
    """Quality-filter volumes, split by patient, and extract gap-k triplets per split."""
    kept = [v for v in volumes if v.n_slices >= min_slices]
    excluded = [v.patient_id for v in volumes if v.n_slices < min_slices]
    if excluded:
        log.info("excluded %d volumes with fewer than %d slices", len(excluded), min_slices)
    manifest = make_splits([v.patient_id for v in kept], ratios, seed)
    by_id = {v.patient_id: v for v in kept}
    ds = TripletDataset(manifest, k, excluded=excluded)
    for name in ("train", "val", "test"):
        ds.splits[name] = [t for pid in getattr(manifest, name) for t in extract_triplets(by_id[pid], k)]
    return ds


def stack_triplets(triplets: list[TripletSample]) -> tuple[np.ndarray, np.ndarray]:
    """(N, 2, H, W) lower/upper conditioning and (N, 1, H, W) targets."""
    cond = np.stack([np.stack([t.lower, t.upper]) for t in triplets]).astype(np.float32)
    target = np.stack([t.target[None] for t in triplets]).astype(np.float32)
    return cond, target


# -- svol files ------------------------------------------------------------------


def save_volume(volume: Volume, path) -> None:
    path = Path(path)
    header = {
        "patient_id": volume.patient_id,
        "height": volume.height,
        "width": volume.width,
        "slices": volume.n_slices,
        "in_plane_mm": volume.in_plane_mm,
        "slice_mm": volume.slice_mm,
    }
    payload = MAGIC + json.dumps(header).encode("utf-8") + b"\n" + volume.voxels.astype("<f4").tobytes()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_volume(path) -> Volume:
    raw = Path(path).read_bytes()
    for offset, expected in enumerate(MAGIC):
        if offset >= len(raw) or raw[offset] != expected:
            raise BadMagicError(f"{path}: bad svol magic at byte offset {offset}")
    newline = raw.find(b"\n", len(MAGIC))
    if newline < 0:
        raise TruncatedVolumeError(f"{path}: header line is not terminated")
    try:
        header = json.loads(raw[len(MAGIC) : newline].decode("utf-8"))
        s, h, w = int(header["slices"]), int(header["height"]), int(header["width"])
    except (ValueError, KeyError, TypeError) as exc:
        raise VolumeFormatError(f"{path}: malformed header at byte offset {len(MAGIC)}: {exc}") from exc
    if min(s, h, w) <= 0 or max(s, h, w) > MAX_EXTENT:
        raise ExtentOverflowError(f"{path}: extents {s}x{h}x{w} outside 1..{MAX_EXTENT}")
    body = raw[newline + 1 :]
    expected_len = 4 * s * h * w
    if len(body) != expected_len:
        raise TruncatedVolumeError(f"{path}: header promises {expected_len} payload bytes, found {len(body)}")
    voxels = np.frombuffer(body, dtype="<f4").reshape(s, h, w).astype(np.float32)
    return Volume(str(header["patient_id"]), voxels, float(header["in_plane_mm"]), float(header["slice_mm"]))
