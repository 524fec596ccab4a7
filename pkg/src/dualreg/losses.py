"""Objective terms with analytic gradients.

Every differentiable loss returns a :class:`LossValueGrad` whose gradient is
taken with respect to the second (moving-side) argument.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy import ndimage

from .mind import MindParams, MindVolume, mind
from .volume import DisplacementField, Volume3


@dataclass
class LossValueGrad:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class SsimParams:
    radius: int = 3
    c1: float = 0.01**2
    c2: float = 0.03**2

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError(f"ssim radius must be an integer >= 1, got {self.radius}")
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("ssim constants c1, c2 must be > 0")


@dataclass(frozen=True)
class TranslationLossWeights:
    cyc: float = 10.0
    identity: float = 5.0
    mind: float = 5.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"translation weight {name} must be >= 0, got {v}")


def _same_dims(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x
    return x.data if hasattr(x, "data") else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------- SSIM

def box_sum(x: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the (2r+1)^3 window, truncated at the volume border.

    Zero padding makes this operator symmetric, so it is its own adjoint.
    """
    size = 2 * radius + 1
    out = x
    for axis in range(3):
        out = ndimage.uniform_filter1d(out, size, axis=axis, mode="constant", cval=0.0) * size
    return out


def _ssim_parts(a: np.ndarray, b: np.ndarray, p: SsimParams):
    r = int(p.radius)
    count = box_sum(np.ones_like(a), r)
    mu_a = box_sum(a, r) / count
    mu_b = box_sum(b, r) / count
    var_a = box_sum(a * a, r) / count - mu_a**2
    var_b = box_sum(b * b, r) / count - mu_b**2
    cov = box_sum(a * b, r) / count - mu_a * mu_b
    num_l = 2 * mu_a * mu_b + p.c1
    num_c = 2 * cov + p.c2
    den_l = mu_a**2 + mu_b**2 + p.c1
    den_c = var_a + var_b + p.c2
    smap = num_l * num_c / (den_l * den_c)
    return smap, locals()


def ssim_map(a, b, params: SsimParams = SsimParams()) -> np.ndarray:
    a, b = _as_array(a), _as_array(b)
    _same_dims(a, b, "ssim")
    return _ssim_parts(a, b, params)[0]


def ssim_index(a, b, params: SsimParams = SsimParams()) -> float:
    """Mean local SSIM over all voxels (uniform windows clipped at borders)."""
    return float(ssim_map(a, b, params).mean())


def ssim_loss(a, b, params: SsimParams = SsimParams()) -> LossValueGrad:
    """``1 - ssim_index(a, b)`` and its gradient with respect to ``b``."""
    a, b = _as_array(a), _as_array(b)
    _same_dims(a, b, "ssim_loss")
    smap, t = _ssim_parts(a, b, params)
    n = smap.size
    r = int(params.radius)
    den = t["den_l"] * t["den_c"]
    # partials of the local index w.r.t. mu_b, var_b and cov
    d_mu = (2 * t["mu_a"] * t["num_c"] - 2 * t["mu_b"] * smap * t["den_c"]) / den
    d_var = -smap / t["den_c"]
    d_cov = 2 * t["num_l"] / den
    count = t["count"]
    mu_a, mu_b = t["mu_a"], t["mu_b"]
    const = (d_mu - 2 * d_var * mu_b - d_cov * mu_a) / count
    grad = box_sum(const, r) + 2 * b * box_sum(d_var / count, r) + a * box_sum(d_cov / count, r)
    return LossValueGrad(1.0 - float(smap.mean()), -grad / n)


# ---------------------------------------------------------------- other similarities

def mse_loss(a, b) -> LossValueGrad:
    a, b = _as_array(a), _as_array(b)
    _same_dims(a, b, "mse_loss")
    diff = b - a
    return LossValueGrad(float(np.mean(diff * diff)), 2.0 * diff / diff.size)


def mind_l1_loss(ma, mb) -> LossValueGrad:
    """Mean absolute difference of two descriptor fields over voxels and channels."""
    ma, mb = _as_array(ma), _as_array(mb)
    _same_dims(ma, mb, "mind_l1_loss")
    diff = mb - ma
    return LossValueGrad(float(np.abs(diff).sum() / diff.size), np.sign(diff) / diff.size)


def smoothness_loss(field) -> LossValueGrad:
    """Mean squared forward difference of the field.

    The mean runs over components and all forward differences that exist
    (the far border has none along its axis).
    """
    u = _as_array(field)
    if u.ndim != 4 or min(u.shape[:3]) < 2:
        raise ValueError(f"smoothness_loss needs a field with >= 2 voxels per axis, got {u.shape}")
    diffs = [np.diff(u, axis=a) for a in range(3)]
    count = sum(d.size for d in diffs)
    value = sum(float(np.sum(d * d)) for d in diffs) / count
    grad = np.zeros_like(u)
    for a, d in enumerate(diffs):
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        grad[tuple(hi)] += 2 * d / count
        grad[tuple(lo)] -= 2 * d / count
    return LossValueGrad(value, grad)


# ---------------------------------------------------------------- translation terms

def identity_translation_loss(translator, same_domain: Volume3) -> float:
    """Mean absolute change a translator makes to an image already in its target domain."""
    out = translator.translate(same_domain)
    return float(np.mean(np.abs(out.data - same_domain.data)))


def cycle_consistency_loss(fwd, bwd, vol: Volume3) -> float:
    """Mean absolute reconstruction error of ``bwd(fwd(vol))``."""
    rec = bwd.translate(fwd.translate(vol))
    return float(np.mean(np.abs(rec.data - vol.data)))


def _mind_consistency(translator, vol: Volume3, params: MindParams) -> float:
    return mind_l1_loss(mind(vol, params), mind(translator.translate(vol), params)).value


NOT_COMPUTED = "not computed"


def translation_score(
    fwd,
    bwd,
    ct_vols: Sequence[Volume3],
    mr_vols: Sequence[Volume3],
    weights: TranslationLossWeights = TranslationLossWeights(),
    mind_params: MindParams = MindParams(),
) -> dict:
    """Deterministic terms of the translation objective.

    ``fwd`` maps CT to MR and ``bwd`` maps MR to CT. Each term is averaged over
    the volumes of its domain. The two adversarial terms have no
    discriminator to evaluate them and are reported as ``"not computed"``.
    """
    if not ct_vols or not mr_vols:
        raise ValueError("translation_score needs at least one CT and one MR volume")
    avg = lambda f, vols: float(np.mean([f(v) for v in vols]))
    report = {
        "cycle_ct": avg(lambda v: cycle_consistency_loss(fwd, bwd, v), ct_vols),
        "cycle_mr": avg(lambda v: cycle_consistency_loss(bwd, fwd, v), mr_vols),
        "identity_mr": avg(lambda v: identity_translation_loss(fwd, v), mr_vols),
        "identity_ct": avg(lambda v: identity_translation_loss(bwd, v), ct_vols),
        "mind_mr": avg(lambda v: _mind_consistency(bwd, v, mind_params), mr_vols),
        "mind_ct": avg(lambda v: _mind_consistency(fwd, v, mind_params), ct_vols),
    }
    report["cycle"] = report["cycle_ct"] + report["cycle_mr"]
    report["identity"] = report["identity_mr"] + report["identity_ct"]
    report["mind"] = report["mind_mr"] + report["mind_ct"]
    report["weighted_sum"] = (
        weights.cyc * report["cycle"] + weights.identity * report["identity"] + weights.mind * report["mind"]
    )
    report["adversarial_mr"] = NOT_COMPUTED
    report["adversarial_ct"] = NOT_COMPUTED
    return report


def format_report(report: dict) -> str:
    lines = []
    for k, v in report.items():
        lines.append(f"{k} = {float(v)!r}\n" if isinstance(v, (float, np.floating)) else f"{k} = {v}\n")
    return "".join(lines)
