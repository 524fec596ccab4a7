"""Dual-stream deformable registration by direct field optimization.

Two displacement fields are optimized jointly with a 3x3x3 fusion convolution:
``phi_o`` aligns the original moving volume to the fixed one, ``phi_s`` aligns
the translated moving volume to the fixed one, and the fused field ``phi_os``
(convolution of the stacked six components) warps the original moving volume.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import losses
from .losses import SsimParams
from .mind import MindParams, mind_array
from .translator import IdentityTranslator, Translator
from .volume import DisplacementField, Volume3, downsample2, normalize_intensity, upsample_field, warp_array

log = logging.getLogger(__name__)

SIMILARITIES = ("ssim", "mind", "mse")
MODES = ("dual", "uni", "multi")


class RegistrationError(RuntimeError):
    """Non-finite loss during optimization."""

    def __init__(self, message: str, iteration: int, trace: list):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


# ---------------------------------------------------------------- fusion kernel

@dataclass(frozen=True, eq=False)
class FusionKernel:
    """Weights ``[dx+1, dy+1, dz+1, c_in, c_out]`` and one bias per output.

    Input channels 0-2 are the components of ``phi_o``, 3-5 those of ``phi_s``.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        b = np.array(self.bias, dtype=np.float64, copy=True)
        if w.shape != (3, 3, 3, 6, 3) or b.shape != (3,):
            raise ValueError(f"fusion kernel needs weights (3,3,3,6,3) and bias (3,), got {w.shape}, {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("fusion kernel contains NaN or Inf")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def selector(cls, weight_o: float, weight_s: float) -> "FusionKernel":
        w = np.zeros((3, 3, 3, 6, 3))
        for c in range(3):
            w[1, 1, 1, c, c] = weight_o
            w[1, 1, 1, c + 3, c] = weight_s
        return cls(w, np.zeros(3))

    @classmethod
    def averaging(cls) -> "FusionKernel":
        return cls.selector(0.5, 0.5)

    def params(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def from_params(cls, p: np.ndarray) -> "FusionKernel":
        return cls(p[:486].reshape(3, 3, 3, 6, 3), p[486:])


def _stack(phi_o: np.ndarray, phi_s: np.ndarray) -> np.ndarray:
    if phi_o.shape != phi_s.shape:
        raise ValueError(f"fuse: dimension mismatch {phi_o.shape} vs {phi_s.shape}")
    return np.concatenate([phi_o, phi_s], axis=-1)


def _taps():
    return [(i, j, k) for i in range(3) for j in range(3) for k in range(3)]


def fuse_array(stacked: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    nx, ny, nz = stacked.shape[:3]
    padded = np.pad(stacked, ((1, 1), (1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(bias, (nx, ny, nz, 3)).copy()
    for i, j, k in _taps():
        w = weights[i, j, k]
        if np.any(w):
            out += padded[i:i + nx, j:j + ny, k:k + nz] @ w
    return out


def fuse_adjoint(stacked: np.ndarray, weights: np.ndarray, cotangent: np.ndarray):
    """Pull a cotangent on the fused field back to the inputs and the kernel.

    Returns ``(grad_stacked, grad_weights, grad_bias)``.
    """
    nx, ny, nz = stacked.shape[:3]
    padded = np.pad(stacked, ((1, 1), (1, 1), (1, 1), (0, 0)))
    grad_pad = np.zeros_like(padded)
    grad_w = np.zeros_like(weights)
    g2 = cotangent.reshape(-1, 3)
    for i, j, k in _taps():
        window = padded[i:i + nx, j:j + ny, k:k + nz]
        grad_w[i, j, k] = window.reshape(-1, 6).T @ g2
        w = weights[i, j, k]
        if np.any(w):
            grad_pad[i:i + nx, j:j + ny, k:k + nz] += cotangent @ w.T
    grad_b = cotangent.sum(axis=(0, 1, 2))
    return grad_pad[1:-1, 1:-1, 1:-1], grad_w, grad_b


def fuse(phi_o: DisplacementField, phi_s: DisplacementField, kernel: FusionKernel) -> DisplacementField:
    """Convolve the stacked stream fields (zero padding) into one field."""
    stacked = _stack(phi_o.data, phi_s.data)
    return DisplacementField(fuse_array(stacked, kernel.weights, kernel.bias), phi_o.spacing)


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class RegistrationConfig:
    lambda_smooth: float = 1.0
    similarity: str = "ssim"
    alpha_o: float = 0.5
    alpha_s: float = 0.5
    levels: int = 3
    iterations: tuple[int, ...] = (200, 100, 50)
    step_field: float = 0.1
    step_kernel: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    mind: MindParams = field(default_factory=MindParams)
    ssim: SsimParams = field(default_factory=SsimParams)

    def __post_init__(self):
        object.__setattr__(self, "iterations", tuple(int(i) for i in self.iterations))
        if self.similarity not in SIMILARITIES:
            raise ValueError(f"similarity must be one of {SIMILARITIES}, got {self.similarity!r}")
        for name in ("lambda_smooth", "alpha_o", "alpha_s", "step_field", "step_kernel"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if len(self.iterations) < self.levels or min(self.iterations) < 1:
            raise ValueError(f"need >= 1 iterations for each of {self.levels} levels, got {self.iterations}")

    def iterations_per_level(self) -> tuple[int, ...]:
        """Iteration counts from coarsest to finest; surplus leading entries are dropped."""
        return self.iterations[len(self.iterations) - self.levels:]


# ---------------------------------------------------------------- objective

def _similarity(kind: str, fixed: np.ndarray, fixed_mind: np.ndarray, moving: np.ndarray,
                moving_mind: np.ndarray, disp: np.ndarray, cfg: RegistrationConfig):
    """Similarity of ``fixed`` and ``moving`` warped by ``disp``; returns value, d/d disp."""
    if kind == "mind":
        warped, dw = warp_array(moving_mind, disp, with_grad=True)
        lg = losses.mind_l1_loss(fixed_mind, warped)
        return lg.value, np.einsum("...c,...cd->...d", lg.grad, dw)
    warped, dw = warp_array(moving, disp, with_grad=True)
    if kind == "ssim":
        lg = losses.ssim_loss(fixed, warped, cfg.ssim)
    else:
        lg = losses.mse_loss(fixed, warped)
    return lg.value, lg.grad[..., None] * dw


@dataclass
class LevelImages:
    """Images of one pyramid level plus their precomputed descriptors."""

    ct: np.ndarray
    mr: np.ndarray
    tmr: np.ndarray
    ct_mind: Optional[np.ndarray] = None
    mr_mind: Optional[np.ndarray] = None

    @classmethod
    def build(cls, ct, mr, tmr, cfg: RegistrationConfig, need_mind: bool = True) -> "LevelImages":
        if need_mind:
            return cls(ct, mr, tmr, mind_array(ct, cfg.mind), mind_array(mr, cfg.mind))
        return cls(ct, mr, tmr)


def _dual_objective(img: LevelImages, phi_o, phi_s, weights, bias, cfg: RegistrationConfig):
    stacked = _stack(phi_o, phi_s)
    phi_os = fuse_array(stacked, weights, bias)
    terms = {}
    terms["sim"], g_os = _similarity(cfg.similarity, img.mr, img.mr_mind, img.ct, img.ct_mind, phi_os, cfg)
    sm = losses.smoothness_loss(phi_os)
    terms["smooth"] = sm.value
    g_os = g_os + cfg.lambda_smooth * sm.grad
    g_stacked, g_w, g_b = fuse_adjoint(stacked, weights, g_os)
    g_o = g_stacked[..., :3].copy()
    g_s = g_stacked[..., 3:].copy()
    terms["aux_o"] = terms["aux_s"] = 0.0
    if cfg.alpha_o > 0:
        terms["aux_o"], g = _similarity("mind", img.mr, img.mr_mind, img.ct, img.ct_mind, phi_o, cfg)
        g_o += cfg.alpha_o * g
    if cfg.alpha_s > 0:
        terms["aux_s"], g = _similarity("ssim", img.mr, None, img.tmr, None, phi_s, cfg)
        g_s += cfg.alpha_s * g
    terms["total"] = (terms["sim"] + cfg.lambda_smooth * terms["smooth"]
                      + cfg.alpha_o * terms["aux_o"] + cfg.alpha_s * terms["aux_s"])
    return terms, {"phi_o": g_o, "phi_s": g_s, "kernel": np.concatenate([g_w.ravel(), g_b])}


def total_loss(rct: Volume3, rmr: Volume3, tmr: Volume3, phi_o: DisplacementField,
               phi_s: DisplacementField, kernel: FusionKernel, cfg: RegistrationConfig = RegistrationConfig()):
    """Dual-stream objective and its gradients.

    ``sim(rMR, rCT o phi_os) + lambda * smooth(phi_os)
    + alpha_o * mindL1(rMR, rCT o phi_o) + alpha_s * (1 - SSIM(rMR, tMR o phi_s))``

    Returns ``(terms, grads)``: a dict of named scalars (``total``, ``sim``,
    ``smooth``, ``aux_o``, ``aux_s``) and a dict of gradients keyed ``phi_o``,
    ``phi_s`` and ``kernel`` (the 486 weights followed by the 3 biases).
    """
    for v in (rmr, tmr, phi_o, phi_s):
        if tuple(v.dims) != tuple(rct.dims):
            raise ValueError(f"total_loss: dimension mismatch {tuple(v.dims)} vs {tuple(rct.dims)}")
    img = LevelImages.build(rct.data, rmr.data, tmr.data, cfg)
    return _dual_objective(img, phi_o.data, phi_s.data, kernel.weights, kernel.bias, cfg)


def _single_objective(kind: str):
    def objective(img: LevelImages, params: dict, cfg: RegistrationConfig):
        u = params["phi"]
        terms = {}
        terms["sim"], g = _similarity(kind, img.mr, img.mr_mind, img.ct, img.ct_mind, u, cfg)
        sm = losses.smoothness_loss(u)
        terms["smooth"] = sm.value
        terms["total"] = terms["sim"] + cfg.lambda_smooth * sm.value
        return terms, {"phi": g + cfg.lambda_smooth * sm.grad}
    return objective


def _dual_params_objective(img: LevelImages, params: dict, cfg: RegistrationConfig):
    k = params["kernel"]
    return _dual_objective(img, params["phi_o"], params["phi_s"], k[:486].reshape(3, 3, 3, 6, 3), k[486:], cfg)


# ---------------------------------------------------------------- optimizer

class Adam:
    """Adaptive-moment first-order updates on a dict of arrays, one step size per key."""

    def __init__(self, steps: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.steps = steps
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for key, p in params.items():
            g = grads[key]
            m = self.beta1 * self.m.get(key, 0.0) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(key, 0.0) + (1 - self.beta2) * g * g
            self.m[key], self.v[key] = m, v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            out[key] = p - self.steps[key] * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


# ---------------------------------------------------------------- driver

@dataclass
class RegistrationResult:
    phi_o: DisplacementField
    phi_s: DisplacementField
    phi_os: DisplacementField
    kernel: FusionKernel
    trace: list
    moved: Volume3
    initial_loss: float
    final_loss: float
    translated: Optional[Volume3] = None

    def trace_lines(self) -> list[str]:
        return [f"{it} {level} {name} {float(value)!r}" for it, level, terms in self.trace for name, value in terms.items()]


def _pyramid(vol: Volume3, levels: int) -> list[Volume3]:
    pyr = [vol]
    for _ in range(levels - 1):
        pyr.append(downsample2(pyr[-1]))
    return pyr[::-1]


def _optimize(images: list[LevelImages], init: Callable[[tuple], dict], objective, cfg: RegistrationConfig,
              field_keys: tuple[str, ...]):
    trace = []
    it = 0
    params = None
    n_levels = len(images)
    initial = final = float("nan")
    for level, (img, n_iter) in enumerate(zip(images, cfg.iterations_per_level())):
        dims = img.ct.shape
        if params is None:
            params = init(dims)
        else:
            params = {k: upsample_field(DisplacementField(v), dims).data if k in field_keys else v
                      for k, v in params.items()}
        steps = {k: cfg.step_field if k in field_keys else cfg.step_kernel for k in params}
        opt = Adam(steps, cfg.beta1, cfg.beta2, cfg.adam_eps)
        finest = level == n_levels - 1
        best_value, best_params = np.inf, params
        for i in range(n_iter):
            terms, grads = objective(img, params, cfg)
            if not np.isfinite(terms["total"]) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise RegistrationError("non-finite loss", it, trace)
            trace.append((it, level, terms))
            if finest:
                if i == 0:
                    initial = terms["total"]
                if terms["total"] < best_value:
                    best_value, best_params = terms["total"], params
            params = opt.step(params, grads)
            it += 1
        log.debug("level %d done after %d iterations, loss %.6g", level, n_iter, terms["total"])
        if finest:
            terms, _ = objective(img, params, cfg)
            if not np.isfinite(terms["total"]):
                raise RegistrationError("non-finite loss", it, trace)
            if terms["total"] <= best_value:
                best_value, best_params = terms["total"], params
            params = best_params
            final = best_value
    return params, trace, initial, final


def _prepare(moving: Volume3, fixed: Volume3):
    if moving.dims != fixed.dims:
        raise ValueError(f"register: dimension mismatch {moving.dims} vs {fixed.dims}")
    if not np.allclose(moving.spacing, fixed.spacing):
        raise ValueError(f"register: spacing mismatch {moving.spacing} vs {fixed.spacing}")
    return normalize_intensity(moving), normalize_intensity(fixed)


def register(rct: Volume3, rmr: Volume3, translator: Translator = IdentityTranslator(),
             cfg: RegistrationConfig = RegistrationConfig(), translated: Optional[Volume3] = None) -> RegistrationResult:
    """Dual-stream registration of ``rct`` (moving) onto ``rmr`` (fixed).

    Both inputs are min-max normalized. The translated volume is produced once
    at full resolution by ``translator`` unless ``translated`` is given.
    """
    rct, rmr = _prepare(rct, rmr)
    if translated is None:
        tmr = translator.translate(rct)
    else:
        if translated.dims != rct.dims:
            raise ValueError(f"register: translated volume dims {translated.dims} vs {rct.dims}")
        tmr = normalize_intensity(translated)
    pyr = [_pyramid(v, cfg.levels) for v in (rct, rmr, tmr)]
    need_mind = cfg.similarity == "mind" or cfg.alpha_o > 0
    images = [LevelImages.build(c.data, m.data, t.data, cfg, need_mind) for c, m, t in zip(*pyr)]

    def init(dims):
        return {"phi_o": np.zeros(dims + (3,)), "phi_s": np.zeros(dims + (3,)),
                "kernel": FusionKernel.averaging().params()}

    params, trace, initial, final = _optimize(images, init, _dual_params_objective, cfg, ("phi_o", "phi_s"))
    kernel = FusionKernel.from_params(params["kernel"])
    phi_o = DisplacementField(params["phi_o"], rct.spacing)
    phi_s = DisplacementField(params["phi_s"], rct.spacing)
    phi_os = fuse(phi_o, phi_s, kernel)
    moved = rct.with_data(warp_array(rct.data, phi_os.data))
    return RegistrationResult(phi_o, phi_s, phi_os, kernel, trace, moved, initial, final, tmr)


def register_single_stream(moving: Volume3, fixed: Volume3, similarity: str = "ssim",
                           cfg: RegistrationConfig = RegistrationConfig()) -> RegistrationResult:
    """Optimize one field against ``similarity`` plus smoothness; no fusion.

    The returned ``phi_o`` and ``phi_os`` both hold the single field and
    ``phi_s`` is zero; ``kernel`` is the selector that reproduces
    ``phi_os = fuse(phi_o, phi_s, kernel)``.
    """
    if similarity not in SIMILARITIES:
        raise ValueError(f"similarity must be one of {SIMILARITIES}, got {similarity!r}")
    moving, fixed = _prepare(moving, fixed)
    pyr = [_pyramid(v, cfg.levels) for v in (moving, fixed)]
    images = [LevelImages.build(m.data, f.data, m.data, cfg, similarity == "mind") for m, f in zip(*pyr)]
    params, trace, initial, final = _optimize(
        images, lambda dims: {"phi": np.zeros(dims + (3,))}, _single_objective(similarity), cfg, ("phi",))
    phi = DisplacementField(params["phi"], moving.spacing)
    zero = DisplacementField.zeros(phi.dims, phi.spacing)
    moved = moving.with_data(warp_array(moving.data, phi.data))
    return RegistrationResult(phi, zero, phi, FusionKernel.selector(1.0, 0.0), trace, moved, initial, final)


def register_mode(rct: Volume3, rmr: Volume3, translator: Translator = IdentityTranslator(),
                  cfg: RegistrationConfig = RegistrationConfig(), mode: str = "dual",
                  translated: Optional[Volume3] = None) -> RegistrationResult:
    """Run one of the stream configurations.

    ``dual`` is :func:`register`. ``uni`` registers the translated volume to
    the fixed one with the configured similarity; ``multi`` registers the
    original moving volume with MIND. The single-stream modes report their
    field as ``phi_s`` (uni) or ``phi_o`` (multi) and as ``phi_os``; the
    returned ``moved`` is always the original moving volume warped by ``phi_os``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "dual":
        return register(rct, rmr, translator, cfg, translated)
    rct_n, _ = _prepare(rct, rmr)
    if mode == "uni":
        tmr = translator.translate(rct_n) if translated is None else normalize_intensity(translated)
        res = register_single_stream(tmr, rmr, cfg.similarity, cfg)
        res = replace(res, phi_o=res.phi_s, phi_s=res.phi_o, kernel=FusionKernel.selector(0.0, 1.0), translated=tmr)
    else:
        res = register_single_stream(rct, rmr, "mind", cfg)
    res.moved = rct_n.with_data(warp_array(rct_n.data, res.phi_os.data))
    return res
