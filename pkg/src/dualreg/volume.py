"""Dense 3D grids, trilinear sampling, warping and pyramid resampling.

Arrays are indexed ``[x, y, z]`` (shape ``(nx, ny, nz)``); vector fields carry
the component axis last. Displacements are in voxels of the grid they live on.
Sampling clamps coordinates to the grid (clamp-to-edge).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy import ndimage


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be 3 positive finite values, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class Volume3:
    """Scalar volume with physical voxel spacing in millimeters."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise ValueError(f"Volume3 needs a 3D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("Volume3 data contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data) -> "Volume3":
        return Volume3(data, self.spacing)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Dense displacement field, shape ``(nx, ny, nz, 3)``, in voxels."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 4 or data.shape[-1] != 3:
            raise ValueError(f"DisplacementField needs shape (nx, ny, nz, 3), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("DisplacementField data contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @classmethod
    def zeros(cls, dims, spacing=(1.0, 1.0, 1.0)) -> "DisplacementField":
        return cls(np.zeros(tuple(dims) + (3,)), spacing)

    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.data, axis=-1)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=bool, copy=True)
        if data.ndim != 3:
            raise ValueError(f"BinaryMask needs a 3D array, got shape {data.shape}")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def as_volume(self) -> Volume3:
        return Volume3(self.data.astype(np.float64), self.spacing)


def identity_grid(dims) -> np.ndarray:
    """Voxel coordinates of every lattice point, shape ``dims + (3,)``."""
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@njit(cache=True)
def _trilinear(flat, nx, ny, nz, pts, with_grad):
    m, nc = pts.shape[0], flat.shape[1]
    val = np.empty((m, nc))
    grad = np.zeros((m, nc, 3)) if with_grad else np.zeros((0, nc, 3))
    sizes = (nx, ny, nz)
    i0 = np.empty(3, np.int64)
    i1 = np.empty(3, np.int64)
    f = np.empty(3)
    inside = np.empty(3, np.bool_)
    for q in range(m):
        for a in range(3):
            n = sizes[a]
            p = pts[q, a]
            pc = min(max(p, 0.0), n - 1.0)
            lo = min(int(np.floor(pc)), max(n - 2, 0))
            i0[a] = lo
            i1[a] = min(lo + 1, n - 1)
            f[a] = pc - lo
            inside[a] = p >= 0.0 and p <= n - 1.0
        fx, fy, fz = f[0], f[1], f[2]
        b00 = i0[0] * ny * nz
        b10 = i1[0] * ny * nz
        y0, y1 = i0[1] * nz, i1[1] * nz
        z0, z1 = i0[2], i1[2]
        for c in range(nc):
            c000 = flat[b00 + y0 + z0, c]
            c001 = flat[b00 + y0 + z1, c]
            c010 = flat[b00 + y1 + z0, c]
            c011 = flat[b00 + y1 + z1, c]
            c100 = flat[b10 + y0 + z0, c]
            c101 = flat[b10 + y0 + z1, c]
            c110 = flat[b10 + y1 + z0, c]
            c111 = flat[b10 + y1 + z1, c]
            # convex-combination lerp is exact at both cell ends
            x00 = (1 - fx) * c000 + fx * c100
            x01 = (1 - fx) * c001 + fx * c101
            x10 = (1 - fx) * c010 + fx * c110
            x11 = (1 - fx) * c011 + fx * c111
            yz0 = (1 - fy) * x00 + fy * x10
            yz1 = (1 - fy) * x01 + fy * x11
            val[q, c] = (1 - fz) * yz0 + fz * yz1
            if with_grad:
                if inside[0]:
                    d0 = (1 - fy) * (c100 - c000) + fy * (c110 - c010)
                    d1 = (1 - fy) * (c101 - c001) + fy * (c111 - c011)
                    grad[q, c, 0] = (1 - fz) * d0 + fz * d1
                if inside[1]:
                    grad[q, c, 1] = (1 - fz) * (x10 - x00) + fz * (x11 - x01)
                if inside[2]:
                    grad[q, c, 2] = yz1 - yz0
    return val, grad


def interpolate(arr: np.ndarray, coords: np.ndarray, with_grad: bool = False):
    """Trilinear interpolation of ``arr`` at continuous voxel coordinates.

    Parameters
    ----------
    arr : ndarray, shape (nx, ny, nz) or (nx, ny, nz, C)
    coords : ndarray, shape (..., 3)
    with_grad : bool
        Also return the derivative of the sampled values with respect to the
        coordinates. Along an axis where the coordinate was clamped the
        derivative is zero.

    Returns
    -------
    values : ndarray, shape coords.shape[:-1] (+ (C,))
    grad : ndarray, shape values.shape + (3,), only if ``with_grad``
    """
    nx, ny, nz = arr.shape[:3]
    chan = arr.shape[3:]
    flat = np.ascontiguousarray(arr, dtype=np.float64).reshape(nx * ny * nz, -1)
    lead = coords.shape[:-1]
    pts = np.ascontiguousarray(coords, dtype=np.float64).reshape(-1, 3)
    val, grad = _trilinear(flat, nx, ny, nz, pts, with_grad)
    val = val.reshape(lead + chan)
    if not with_grad:
        return val
    return val, grad.reshape(lead + chan + (3,))


def sample_trilinear(vol: Volume3, p) -> float:
    """Trilinearly interpolate ``vol`` at one continuous voxel coordinate."""
    p = np.asarray(p, dtype=np.float64).reshape(1, 3)
    return float(interpolate(vol.data, p)[0])


def _check_dims(a, b, what: str):
    if tuple(a) != tuple(b):
        raise ValueError(f"{what}: dimension mismatch {tuple(a)} vs {tuple(b)}")


def warp_array(arr: np.ndarray, disp: np.ndarray, with_grad: bool = False):
    """Sample ``arr`` at ``x + disp(x)`` for every lattice point ``x``."""
    coords = identity_grid(disp.shape[:3]) + disp
    return interpolate(arr, coords, with_grad=with_grad)


def warp(moving: Volume3, field: DisplacementField) -> Volume3:
    _check_dims(moving.dims, field.dims, "warp")
    return moving.with_data(warp_array(moving.data, field.data))


def warp_multichannel(channels: Sequence[Volume3], field: DisplacementField) -> list[Volume3]:
    """Warp every channel with one shared field."""
    for ch in channels:
        _check_dims(ch.dims, field.dims, "warp_multichannel")
    if not channels:
        return []
    stacked = warp_array(np.stack([ch.data for ch in channels], axis=-1), field.data)
    return [channels[i].with_data(stacked[..., i]) for i in range(len(channels))]


# 3-tap Gaussian with sigma = 1 voxel, normalized to preserve constants
_BLUR_TAPS = np.exp(-0.5 * np.array([1.0, 0.0, 1.0]))
_BLUR_TAPS /= _BLUR_TAPS.sum()


def _lattice(n_src: int, n_dst: int) -> np.ndarray:
    # cell-centred correspondence: the physical extent n * spacing is kept
    return (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5


def _resize(arr: np.ndarray, dims) -> np.ndarray:
    axes = [_lattice(n, m) for n, m in zip(arr.shape[:3], dims)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return interpolate(arr, coords)


def _target_dims(dims, factor) -> tuple[int, int, int]:
    factor = np.broadcast_to(np.asarray(factor, dtype=np.float64), (3,))
    if np.any(factor <= 0):
        raise ValueError(f"resample factor must be positive, got {tuple(factor)}")
    out = tuple(int(round(n * f)) for n, f in zip(dims, factor))
    if min(out) < 2:
        raise ValueError(f"resample to {out} gives fewer than 2 voxels on an axis")
    return out


def resample(vol: Volume3, factor) -> Volume3:
    """Rescale the voxel grid by ``factor`` per axis (``< 1`` downsamples).

    Any axis that shrinks is blurred first with a 3-tap Gaussian (sigma one
    voxel, edges replicated). Spacing is scaled so the physical extent is kept.
    """
    dims = _target_dims(vol.dims, factor)
    if dims == vol.dims:
        return vol.with_data(vol.data)
    data = vol.data
    for axis in range(3):
        if dims[axis] < vol.dims[axis]:
            data = ndimage.correlate1d(data, _BLUR_TAPS, axis=axis, mode="nearest")
    spacing = tuple(s * n / m for s, n, m in zip(vol.spacing, vol.dims, dims))
    return Volume3(_resize(data, dims), spacing)


def downsample2(vol: Volume3) -> Volume3:
    return resample(vol, 0.5)


def upsample_field(field: DisplacementField, target_dims) -> DisplacementField:
    """Trilinearly upsample a field and rescale it to voxels of the new grid."""
    target_dims = tuple(int(n) for n in target_dims)
    if len(target_dims) != 3 or any(t < n for t, n in zip(target_dims, field.dims)):
        raise ValueError(f"upsample_field: target {target_dims} smaller than {field.dims}")
    if target_dims == field.dims:
        return DisplacementField(field.data, field.spacing)
    ratio = np.array([t / n for t, n in zip(target_dims, field.dims)])
    data = _resize(field.data, target_dims) * ratio
    spacing = tuple(s / r for s, r in zip(field.spacing, ratio))
    return DisplacementField(data, spacing)


def normalize_intensity(vol: Volume3) -> Volume3:
    """Min-max rescale to [0, 1]; a constant volume maps to zeros."""
    lo, hi = vol.data.min(), vol.data.max()
    if hi <= lo:
        return vol.with_data(np.zeros(vol.dims))
    return vol.with_data((vol.data - lo) / (hi - lo))
