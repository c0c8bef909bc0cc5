"""Green-guided local enhancement: two conv branches fused into three channels.

    out = fusion(concat[F(x) + G(x[guide]), F(x)])

F sees all four gamma-corrected planes, G only the guidance planes picked by
the mode (both greens by default). Mode ``None`` drops G, so the first half
of the concat is just F(x).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ConvBlock,
    Param,
    ShapeError,
    cast,
    concat_channels,
    conv2d,
    conv2d_backward,
    conv_block,
    conv_block_backward,
    split_channels,
)

# plane indices into (R, G1, G2, B)
GUIDANCE_PLANES = {
    "None": (),
    "R": (0,),
    "B": (3,),
    "RB": (0, 3),
    "GG": (1, 2),
    "RGGB": (0, 1, 2, 3),
}
MODES = tuple(GUIDANCE_PLANES)
FEATURES = 8
OUT_CHANNELS = 3


def check_mode(mode):
    if mode not in GUIDANCE_PLANES:
        raise ValueError(f"unknown guidance mode {mode!r}; choose from {', '.join(MODES)}")
    return mode


@dataclass
class GgleWeights:
    mode: str
    f_l: list                      # two ConvBlocks, 4 -> 8 -> 8
    f_l_g: ConvBlock | None        # k -> 8, absent in mode None
    fusion_weight: Param           # (3, 16, 3, 3)
    fusion_bias: Param

    def named_params(self, prefix="ggle"):
        out = {}
        for i, block in enumerate(self.f_l):
            out.update(block.named_params(f"{prefix}.f_l.{i}"))
        if self.f_l_g is not None:
            out.update(self.f_l_g.named_params(f"{prefix}.f_l_g.0"))
        out[f"{prefix}.fusion.weight"] = self.fusion_weight
        out[f"{prefix}.fusion.bias"] = self.fusion_bias
        return out

    def named_buffers(self, prefix="ggle"):
        out = {}
        for i, block in enumerate(self.f_l):
            out.update(block.named_buffers(f"{prefix}.f_l.{i}"))
        if self.f_l_g is not None:
            out.update(self.f_l_g.named_buffers(f"{prefix}.f_l_g.0"))
        return out

    def astype(self, dtype):
        return cast(self, dtype)


def init_ggle(mode="GG", seed=0, dtype=np.float32) -> GgleWeights:
    check_mode(mode)
    rng = np.random.default_rng(seed)
    f_l = [ConvBlock.create(4, FEATURES, rng, dtype), ConvBlock.create(FEATURES, FEATURES, rng, dtype)]
    k = len(GUIDANCE_PLANES[mode])
    f_l_g = ConvBlock.create(k, FEATURES, rng, dtype) if k else None
    # fusion output is linear, so plain fan-in scaling without the rectifier gain
    fw = rng.normal(0.0, 1.0 / np.sqrt(2 * FEATURES * 9), size=(OUT_CHANNELS, 2 * FEATURES, 3, 3))
    return GgleWeights(mode, f_l, f_l_g, Param(fw, dtype), Param(np.zeros(OUT_CHANNELS), dtype))


def param_count(weights: GgleWeights) -> int:
    """Learnable parameters: conv weights/biases and BN scale/shift, no running stats."""
    return sum(p.size for p in weights.named_params().values())


@dataclass
class GgleCache:
    f_l: list
    guide: object
    fusion: object
    planes: tuple
    in_shape: tuple
    guidance_zeroed: bool = False


def ggle_forward(x_gamma, weights: GgleWeights, train=True, zero_guidance=False):
    """Run both branches and the fusion conv on a (N, 4, H, W) batch.

    ``zero_guidance`` replaces the guidance-branch output by zeros, which is
    only useful for checking the additive wiring.
    """
    x = np.asarray(x_gamma)
    if x.ndim != 4 or x.shape[1] != 4:
        raise ShapeError(f"expected (N, 4, H, W), got {x.shape}")
    if x.shape[2] < 3 or x.shape[3] < 3:
        raise ShapeError(f"spatial size {x.shape[2]}x{x.shape[3]} is below the 3x3 kernel support")
    planes = GUIDANCE_PLANES[weights.mode]

    h = x
    f_caches = []
    for block in weights.f_l:
        h, c = conv_block(h, block, train)
        f_caches.append(c)
    feat = h

    guide_cache = None
    if weights.f_l_g is not None:
        g, guide_cache = conv_block(x[:, list(planes)], weights.f_l_g, train)
        if zero_guidance:
            g = np.zeros_like(g)
        first = feat + g
    else:
        first = feat
    out, fusion_cache = conv2d(concat_channels(first, feat), weights.fusion_weight, weights.fusion_bias)
    return out, GgleCache(f_caches, guide_cache, fusion_cache, planes, x.shape, zero_guidance)


def ggle_backward(cache: GgleCache, grad_out):
    """Backprop to the (N, 4, H, W) input, accumulating every weight grad."""
    g_cat = conv2d_backward(cache.fusion, grad_out)
    g_first, g_feat = split_channels(g_cat, FEATURES)
    # F(x) feeds both halves of the concat
    g_feat = g_feat + g_first
    gx = np.zeros(cache.in_shape, dtype=grad_out.dtype)
    if cache.guide is not None and not cache.guidance_zeroed:
        g_guide_in = conv_block_backward(cache.guide, g_first)
        gx[:, list(cache.planes)] += g_guide_in
    g = g_feat
    for c in reversed(cache.f_l):
        g = conv_block_backward(c, g)
    gx += g
    return gx
