"""Per-channel learnable gamma with tanh-bounded exponents."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Param

GAMMA_MIN = 1 / 10.5
GAMMA_MAX = 1 / 7.0
INPUT_EPS = 1e-6
SCALE = 255.0


def gamma_of_alpha(alpha, gamma_min=GAMMA_MIN, gamma_max=GAMMA_MAX):
    """Map an unconstrained alpha into (gamma_min, gamma_max) through tanh.

    Works elementwise on arrays. Raises ValueError on non-finite alpha.
    """
    if not gamma_min < gamma_max:
        raise ValueError(f"need gamma_min < gamma_max, got {gamma_min}, {gamma_max}")
    a = np.asarray(alpha)
    if not np.all(np.isfinite(a)):
        raise ValueError("alpha must be finite")
    return gamma_min + (np.tanh(a) + 1) / 2 * (gamma_max - gamma_min)


def dgamma_dalpha(alpha, gamma_min=GAMMA_MIN, gamma_max=GAMMA_MAX):
    t = np.tanh(np.asarray(alpha))
    return (gamma_max - gamma_min) / 2 * (1 - t * t)


@dataclass
class GammaParams:
    alpha: Param
    gamma_min: float = GAMMA_MIN
    gamma_max: float = GAMMA_MAX

    def __post_init__(self):
        if not 0 < self.gamma_min < self.gamma_max:
            raise ValueError(f"need 0 < gamma_min < gamma_max, got {self.gamma_min}, {self.gamma_max}")
        if self.alpha.shape != (4,):
            raise ValueError(f"alpha must hold 4 values, got shape {self.alpha.shape}")

    @classmethod
    def create(cls, gamma_min=GAMMA_MIN, gamma_max=GAMMA_MAX, alpha=None, dtype=np.float32):
        if alpha is None:
            alpha = np.zeros(4)
        return cls(Param(alpha, dtype), gamma_min, gamma_max)

    def gammas(self):
        """Current exponents, evaluated in float64."""
        return gamma_of_alpha(self.alpha.value.astype(np.float64), self.gamma_min, self.gamma_max)

    def named_params(self, prefix="gge"):
        return {f"{prefix}.alpha": self.alpha}

    def to_dict(self):
        return {"alpha": [float(a) for a in self.alpha.value],
                "gamma_min": float(self.gamma_min), "gamma_max": float(self.gamma_max)}

    @classmethod
    def from_dict(cls, d, dtype=np.float32):
        return cls.create(d["gamma_min"], d["gamma_max"], alpha=d["alpha"], dtype=dtype)

    def astype(self, dtype):
        return GammaParams(self.alpha.astype(dtype), self.gamma_min, self.gamma_max)


@dataclass
class GGECache:
    x: np.ndarray       # clamped input
    inside: np.ndarray  # where the clamp was inactive
    out: np.ndarray
    gamma: np.ndarray
    params: GammaParams


def gge_forward(packed, params: GammaParams):
    """255 * x**gamma_c per plane. Accepts (4, H, W) or (N, 4, H, W)."""
    x = np.asarray(packed)
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    if x.shape[1] != 4:
        raise ValueError(f"expected 4 planes, got {x.shape[1]}")
    dtype = params.alpha.value.dtype
    x = x.astype(dtype)
    inside = (x >= INPUT_EPS) & (x <= 1.0)
    x = np.clip(x, INPUT_EPS, 1.0)
    gamma = gamma_of_alpha(params.alpha.value, params.gamma_min, params.gamma_max).astype(dtype)
    out = SCALE * x ** gamma[None, :, None, None]
    cache = GGECache(x, inside, out, gamma, params)
    return (out if batched else out[0]), cache


def gge_backward(cache: GGECache, grad_out):
    """Accumulate dL/dalpha into the params; return dL/dx for the clamped input."""
    g = np.asarray(grad_out)
    if g.ndim == 3:
        g = g[None]
    p = cache.params
    # d out / d gamma = out * ln x
    g_gamma = (g * cache.out * np.log(cache.x)).sum(axis=(0, 2, 3))
    p.alpha.grad += g_gamma * dgamma_dalpha(p.alpha.value, p.gamma_min, p.gamma_max).astype(g_gamma.dtype)
    gx = cache.inside * g * SCALE * cache.gamma[None, :, None, None] * cache.x ** (cache.gamma[None, :, None, None] - 1)
    return gx if np.ndim(grad_out) == 4 else gx[0]


def param_count(params: GammaParams) -> int:
    return sum(p.size for p in params.named_params().values())


def midpoint_gamma(gamma_min=GAMMA_MIN, gamma_max=GAMMA_MAX):
    return (gamma_min + gamma_max) / 2

