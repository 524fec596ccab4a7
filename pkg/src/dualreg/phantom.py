"""Synthetic two-modality phantoms with known deformations.

Organs are ellipsoids given in fractions of the volume extent, so one organ
table serves any grid size. The fixed "MR" image shows the organs in their
reference position; the moving "CT" image shows them displaced by the inverse
of the ground-truth field, so ``fixed(x) ~ moving(x + u(x))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import ndimage

from .metrics import LandmarkSet
from .translator import GammaRemapTranslator, table_from_pairs
from .volume import BinaryMask, DisplacementField, Volume3, identity_grid, interpolate


@dataclass(frozen=True)
class Organ:
    name: str
    center: tuple[float, float, float]  # fraction of extent
    semi_axes: tuple[float, float, float]  # fraction of extent
    ct: float
    mr: float


# Contrast order differs between modalities: CT body < kidney < spleen < liver,
# MR liver < spleen < body < kidney. Background is 0 in both and the brightest
# organ is 1, so clipped renders already span [0, 1].
DEFAULT_ORGANS = (
    Organ("body", (0.5, 0.5, 0.5), (0.46, 0.43, 0.46), ct=0.25, mr=0.75),
    Organ("liver", (0.3, 0.45, 0.55), (0.2, 0.24, 0.22), ct=1.0, mr=0.25),
    Organ("kidney", (0.68, 0.62, 0.42), (0.21, 0.18, 0.24), ct=0.5, mr=1.0),
    Organ("spleen", (0.7, 0.23, 0.63), (0.18, 0.17, 0.22), ct=0.75, mr=0.5),
)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    organs: tuple[Organ, ...] = DEFAULT_ORGANS
    noise_ct: float = 0.02
    noise_mr: float = 0.02
    max_disp: float = 3.0
    smooth_sigma: float = 8.0
    n_landmarks: int = 10
    primary: str = "kidney"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise ValueError(f"dims: need three sizes >= 8, got {self.dims}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise ValueError(f"spacing: must be positive, got {self.spacing}")
        if self.max_disp < 0:
            raise ValueError(f"max_disp: must be >= 0, got {self.max_disp}")
        if not self.smooth_sigma > 0:
            raise ValueError(f"smooth_sigma: must be > 0, got {self.smooth_sigma}")
        if self.noise_ct < 0 or self.noise_mr < 0:
            raise ValueError("noise_ct/noise_mr: must be >= 0")
        if self.n_landmarks < 0:
            raise ValueError(f"n_landmarks: must be >= 0, got {self.n_landmarks}")
        names = [o.name for o in self.organs]
        if self.primary not in names:
            raise ValueError(f"primary: {self.primary!r} is not one of the organs {names}")
        if len(set(names)) != len(names):
            raise ValueError("organs: names must be unique")
        for o in self.organs:
            lo = np.array(o.center) - np.array(o.semi_axes)
            hi = np.array(o.center) + np.array(o.semi_axes)
            if np.any(lo < 0) or np.any(hi > 1) or min(o.semi_axes) <= 0:
                raise ValueError(f"organs: {o.name} does not fit inside the volume")

    def organ_geometry(self, organ: Organ):
        extent = np.array(self.dims, dtype=np.float64) - 1
        return np.array(organ.center) * extent, np.array(organ.semi_axes) * extent


@dataclass
class PhantomCase:
    spec: PhantomSpec
    fixed: Volume3
    moving: Volume3
    gt_field: DisplacementField
    masks_fixed: dict
    masks_moving: dict
    landmarks_fixed: LandmarkSet
    landmarks_moving: LandmarkSet

    @property
    def primary(self) -> str:
        return self.spec.primary


def _ellipsoid_occupancy(coords: np.ndarray, center, semi) -> tuple[np.ndarray, np.ndarray]:
    """Partial-volume occupancy (1-voxel linear falloff) and the inside test."""
    rho = np.sqrt(np.sum(((coords - center) / semi) ** 2, axis=-1))
    # approximate signed distance in voxels, scaled by the smallest semi-axis
    dist = (rho - 1.0) * np.min(semi)
    return np.clip(0.5 - dist, 0.0, 1.0), rho <= 1.0


def render(spec: PhantomSpec, coords: np.ndarray, modality: str):
    """Noise-free render at reference-frame coordinates; also returns masks."""
    img = np.zeros(coords.shape[:-1])
    masks = {}
    for organ in spec.organs:
        center, semi = spec.organ_geometry(organ)
        occ, inside = _ellipsoid_occupancy(coords, center, semi)
        img = img * (1 - occ) + getattr(organ, modality) * occ
        masks[organ.name] = inside
    return img, masks


def smooth_random_field(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(spec.dims + (3,))
    if spec.max_disp == 0:
        return np.zeros_like(noise)
    smooth = np.stack([ndimage.gaussian_filter(noise[..., c], spec.smooth_sigma, mode="wrap")
                       for c in range(3)], axis=-1)
    peak = np.linalg.norm(smooth, axis=-1).max()
    return smooth * (spec.max_disp / peak)


def invert_points(disp: np.ndarray, points: np.ndarray, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Solve ``x + u(x) = y`` for ``x`` by fixed-point iteration (u trilinear)."""
    x = points.copy()
    for _ in range(max_iter):
        new = points - interpolate(disp, x)
        step = np.max(np.abs(new - x)) if new.size else 0.0
        x = new
        if step < tol:
            break
    return x


def _landmarks(spec: PhantomSpec, disp: np.ndarray, rng: np.random.Generator):
    labels, pts = [], []
    for organ in spec.organs:
        center, semi = spec.organ_geometry(organ)
        labels.append(f"{organ.name}_centroid")
        pts.append(center)
        for i in range(spec.n_landmarks):
            # uniform in the inner 80% of the ellipsoid
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            r = 0.8 * rng.random() ** (1 / 3)
            labels.append(f"{organ.name}_{i}")
            pts.append(center + r * direction * semi)
    fixed_vox = np.array(pts).reshape(-1, 3)
    moving_vox = fixed_vox + interpolate(disp, fixed_vox)
    spacing = np.array(spec.spacing)
    return LandmarkSet(labels, fixed_vox * spacing), LandmarkSet(labels, moving_vox * spacing)


def generate(spec: PhantomSpec = PhantomSpec()) -> PhantomCase:
    """Render a fixed/moving pair, ground-truth field, masks and landmarks."""
    rng = np.random.default_rng(spec.seed)
    disp = smooth_random_field(spec, rng)
    grid = identity_grid(spec.dims)
    fixed_img, fixed_masks = render(spec, grid, "mr")
    # moving voxel y shows reference point x with x + u(x) = y
    ref = invert_points(disp, grid.reshape(-1, 3)).reshape(grid.shape)
    moving_img, moving_masks = render(spec, ref, "ct")
    fixed_img = np.clip(fixed_img + spec.noise_mr * rng.standard_normal(spec.dims), 0.0, 1.0)
    moving_img = np.clip(moving_img + spec.noise_ct * rng.standard_normal(spec.dims), 0.0, 1.0)
    lm_fixed, lm_moving = _landmarks(spec, disp, rng)
    sp = spec.spacing
    return PhantomCase(
        spec=spec,
        fixed=Volume3(fixed_img, sp),
        moving=Volume3(moving_img, sp),
        gt_field=DisplacementField(disp, sp),
        masks_fixed={k: BinaryMask(v, sp) for k, v in fixed_masks.items()},
        masks_moving={k: BinaryMask(v, sp) for k, v in moving_masks.items()},
        landmarks_fixed=lm_fixed,
        landmarks_moving=lm_moving,
    )


def faithful_translator(spec: PhantomSpec) -> GammaRemapTranslator:
    """CT-to-MR staircase remap sending each organ's CT level to its MR level.

    Every level gets a flat plateau a third of the gap to its nearest
    neighbour wide on each side, so rendering noise is not amplified.
    """
    levels = sorted({0.0: 0.0, **{o.ct: o.mr for o in spec.organs}}.items())
    cts = [c for c, _ in levels]
    table = []
    for i, (c, m) in enumerate(levels):
        gaps = [abs(c - cts[j]) for j in (i - 1, i + 1) if 0 <= j < len(cts)]
        half = min(gaps) / 3.0
        for x in (c - half, c + half):
            if 0.0 <= x <= 1.0:
                table.append((x, m))
    return GammaRemapTranslator(1.0, tuple(table))


def modality_gap(spec: PhantomSpec) -> float:
    """SSIM between the noise-free CT and MR renders of identical geometry."""
    from .losses import ssim_index

    grid = identity_grid(spec.dims)
    ct, _ = render(spec, grid, "ct")
    mr, _ = render(spec, grid, "mr")
    return ssim_index(ct, mr)
