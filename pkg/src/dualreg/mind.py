"""Modality independent neighbourhood descriptor over the six-neighbourhood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import Volume3, _freeze, _check_spacing

# search region: +-x, +-y, +-z, in channel order
OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


@dataclass(frozen=True)
class MindParams:
    radius: int = 1
    sigma: float = 0.5
    eps: float = 1e-6

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"mind radius must be an integer >= 1, got {self.radius}")
        if not self.sigma > 0:
            raise ValueError(f"mind sigma must be > 0, got {self.sigma}")
        if not self.eps > 0:
            raise ValueError(f"mind eps must be > 0, got {self.eps}")

    def patch_weights(self) -> dict[tuple[int, int, int], float]:
        """Gaussian patch weights, normalized to sum to one."""
        r = int(self.radius)
        w = {}
        for p in np.ndindex(2 * r + 1, 2 * r + 1, 2 * r + 1):
            q = tuple(int(v) - r for v in p)
            w[q] = float(np.exp(-(q[0] ** 2 + q[1] ** 2 + q[2] ** 2) / (2.0 * self.sigma**2)))
        total = sum(w.values())
        return {q: v / total for q, v in w.items()}


@dataclass(frozen=True, eq=False)
class MindVolume:
    """Six descriptor channels per voxel, shape ``(nx, ny, nz, 6)``."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 4 or data.shape[-1] != len(OFFSETS):
            raise ValueError(f"MindVolume needs shape (nx, ny, nz, 6), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("MindVolume data contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    def channels(self) -> list[Volume3]:
        return [Volume3(self.data[..., c], self.spacing) for c in range(self.data.shape[-1])]


def mind_array(img: np.ndarray, params: MindParams = MindParams()) -> np.ndarray:
    if min(img.shape) < 3:
        raise ValueError(f"mind needs at least 3 voxels per axis, got {img.shape}")
    r = int(params.radius)
    pad = r + 1
    padded = np.pad(img, pad, mode="edge")
    nx, ny, nz = img.shape

    def shifted(q):
        # img at clamp(x + q); edge padding equals clamping for |q| <= pad
        return padded[pad + q[0]:pad + q[0] + nx, pad + q[1]:pad + q[1] + ny, pad + q[2]:pad + q[2] + nz]

    weights = params.patch_weights()
    dist = np.zeros(img.shape + (len(OFFSETS),))
    for c, off in enumerate(OFFSETS):
        for q, w in weights.items():
            moved = (q[0] + off[0], q[1] + off[1], q[2] + off[2])
            diff = shifted(q) - shifted(moved)
            dist[..., c] += w * diff * diff
    variance = np.maximum(dist.mean(axis=-1, keepdims=True), params.eps)
    # raw / max(raw) == exp(-(D - min D) / V); keeps the per-voxel max exactly 1
    return np.exp(-(dist - dist.min(axis=-1, keepdims=True)) / variance)


def mind(vol: Volume3, params: MindParams = MindParams()) -> MindVolume:
    """MIND descriptor of ``vol``.

    For each neighbour offset the Gaussian-weighted patch SSD ``D`` to the
    shifted patch is turned into ``exp(-D / V)``, ``V`` being the mean of ``D``
    over the six offsets (floored at ``params.eps``), and each voxel is scaled
    so its largest channel is 1.
    """
    return MindVolume(mind_array(vol.data, params), vol.spacing)
