"""Evaluation metrics: Dice overlap, target registration error, PSNR, SSIM."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .losses import ssim_index  # noqa: F401  (re-exported)
from .volume import BinaryMask, DisplacementField, Volume3, interpolate, warp_array


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """Labelled points in physical millimeter coordinates."""

    labels: Sequence[str]
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        labels = tuple(str(l) for l in self.labels)
        if len(labels) != len(pts):
            raise ValueError(f"{len(labels)} labels for {len(pts)} points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)


def _check(a, b, what):
    if tuple(a.dims) != tuple(b.dims):
        raise ValueError(f"{what}: dimension mismatch {tuple(a.dims)} vs {tuple(b.dims)}")


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Overlap ``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    _check(a, b, "dice")
    total = int(a.data.sum()) + int(b.data.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a.data, b.data).sum()) / total


def warp_mask(mask: BinaryMask, field: DisplacementField) -> BinaryMask:
    """Warp a mask trilinearly as a 0/1 volume and threshold at 0.5."""
    _check(mask, field, "warp_mask")
    warped = warp_array(mask.data.astype(np.float64), field.data)
    return BinaryMask(warped >= 0.5, mask.spacing)


def tre(moving_lm: LandmarkSet, fixed_lm: LandmarkSet, field: DisplacementField, spacing=None) -> float:
    """Mean distance (mm) between mapped fixed landmarks and their moving partners.

    Each fixed landmark ``p`` (mm) is mapped to ``(p / s + u(p / s)) * s`` with
    ``u`` the field interpolated at voxel position ``p / s``, and compared with
    the moving landmark of the same label.
    """
    if len(moving_lm) != len(fixed_lm) or moving_lm.labels != fixed_lm.labels:
        raise ValueError("tre: landmark sets are not paired (length or labels differ)")
    s = np.asarray(field.spacing if spacing is None else spacing, dtype=np.float64)
    vox = fixed_lm.points / s
    hi = np.array(field.dims) - 1
    for label, p in zip(fixed_lm.labels, vox):
        if np.any(p < 0) or np.any(p > hi):
            raise ValueError(f"tre: landmark {label} lies outside the field extent")
    if len(vox) == 0:
        return 0.0
    mapped = (vox + interpolate(field.data, vox)) * s
    return float(np.mean(np.linalg.norm(mapped - moving_lm.points, axis=1)))


def psnr(a: Volume3, b: Volume3, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the volumes are identical."""
    _check(a, b, "psnr")
    if not peak > 0:
        raise ValueError(f"psnr: peak must be > 0, got {peak}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def endpoint_error(field: DisplacementField, truth: DisplacementField, mask: BinaryMask | None = None) -> float:
    """Mean Euclidean distance (voxels) between two fields, optionally inside a mask."""
    _check(field, truth, "endpoint_error")
    err = np.linalg.norm(field.data - truth.data, axis=-1)
    return float(err[mask.data].mean() if mask is not None else err.mean())
