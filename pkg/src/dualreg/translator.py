"""Deterministic modality translators.

These stand in for trained image-to-image generators: a translator maps a
volume with intensities in [0, 1] to another volume on the same grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .volume import Volume3, identity_grid


class Translator:
    def apply(self, data: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def translate(self, vol: Volume3) -> Volume3:
        out = np.clip(self.apply(vol.data), 0.0, 1.0)
        return vol.with_data(out)

    __call__ = translate


class IdentityTranslator(Translator):
    def apply(self, data):
        return data


@dataclass(frozen=True)
class GammaRemapTranslator(Translator):
    """Optional piecewise-linear remap followed by a power law.

    ``table`` is a sequence of ``(x, y)`` breakpoints in [0, 1] with strictly
    increasing ``x``. Values between breakpoints are interpolated linearly and
    values outside are held at the end values.
    """

    gamma: float = 1.0
    table: Optional[tuple[tuple[float, float], ...]] = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.table is not None:
            table = tuple((float(x), float(y)) for x, y in self.table)
            xs = np.array([x for x, _ in table])
            ys = np.array([y for _, y in table])
            if len(table) < 2:
                raise ValueError("remap table needs at least two breakpoints")
            if np.any(np.diff(xs) <= 0):
                raise ValueError("remap table breakpoints must be strictly increasing")
            if np.any((xs < 0) | (xs > 1) | (ys < 0) | (ys > 1)):
                raise ValueError("remap table entries must lie in [0, 1]")
            object.__setattr__(self, "table", table)

    @property
    def is_monotone(self) -> bool:
        return self.table is None or bool(np.all(np.diff([y for _, y in self.table]) >= 0))

    def apply(self, data):
        out = data
        if self.table is not None:
            xs, ys = zip(*self.table)
            out = np.interp(out, xs, ys)
        if self.gamma != 1.0:
            out = np.power(np.clip(out, 0.0, None), self.gamma)
        return out


@dataclass(frozen=True)
class Blob:
    center: tuple[float, float, float]
    radius: float
    amplitude: float
    sign: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"blob radius must be > 0, got {self.radius}")
        if self.sign not in (1, -1):
            raise ValueError(f"blob sign must be +1 or -1, got {self.sign}")

    def render(self, dims) -> np.ndarray:
        sigma = self.radius / 2.0
        d2 = np.sum((identity_grid(dims) - np.asarray(self.center)) ** 2, axis=-1)
        return self.sign * self.amplitude * np.exp(-d2 / (2.0 * sigma**2))


@dataclass(frozen=True)
class ArtifactInjector(Translator):
    """Base translation plus additive Gaussian blobs (sigma = radius / 2).

    Besides the explicit ``blobs``, ``n_random`` extra blobs are drawn from
    ``seed`` inside the volume when it is translated, so the same seed and
    volume size always give the same artifacts.
    """

    base: Translator = field(default_factory=IdentityTranslator)
    blobs: tuple[Blob, ...] = ()
    seed: int = 0
    n_random: int = 0
    radius_range: tuple[float, float] = (3.0, 6.0)
    amplitude_range: tuple[float, float] = (0.2, 0.4)

    def all_blobs(self, dims) -> list[Blob]:
        blobs = list(self.blobs)
        rng = np.random.default_rng(self.seed)
        for _ in range(self.n_random):
            margin = np.array(dims) * 0.2
            center = tuple(rng.uniform(margin, np.array(dims) - 1 - margin))
            blobs.append(
                Blob(
                    center=center,
                    radius=float(rng.uniform(*self.radius_range)),
                    amplitude=float(rng.uniform(*self.amplitude_range)),
                    sign=int(rng.choice([-1, 1])),
                )
            )
        return blobs

    def apply(self, data):
        out = np.clip(self.base.apply(data), 0.0, 1.0)
        for blob in self.all_blobs(data.shape):
            c = np.asarray(blob.center)
            if np.any(c < 0) or np.any(c > np.array(data.shape) - 1):
                raise ValueError(f"blob center {blob.center} lies outside volume {data.shape}")
            out = out + blob.render(data.shape)
        return out


def translate(t: Translator, vol: Volume3) -> Volume3:
    return t.translate(vol)


def inject_artifacts(inj: ArtifactInjector, vol: Volume3) -> Volume3:
    return inj.translate(vol)


def inverse_gamma_pair(gamma: float) -> tuple[GammaRemapTranslator, GammaRemapTranslator]:
    return GammaRemapTranslator(gamma), GammaRemapTranslator(1.0 / gamma)


def table_from_pairs(src: Sequence[float], dst: Sequence[float]) -> tuple[tuple[float, float], ...]:
    """Breakpoint table mapping each ``src`` level to its ``dst`` level."""
    pairs = sorted(zip(src, dst))
    return tuple((float(x), float(y)) for x, y in pairs)
