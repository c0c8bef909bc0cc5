"""Dense layer primitives with cached forward state and exact backward passes.

Image tensors are numpy arrays laid out as (batch, channels, height, width).
Every op is dtype-generic: float32 for normal use, float64 for the
finite-difference shadow path. Loops over kernel taps run in a fixed order
so repeated calls are bit-identical.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

LEAKY_SLOPE = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


class Param:
    """A learnable tensor with an accumulated gradient slot."""

    def __init__(self, value, dtype=np.float32):
        self.value = np.array(value, dtype=dtype)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0

    def astype(self, dtype):
        return Param(self.value, dtype=dtype)

    def __repr__(self):
        return f"Param(shape={self.value.shape}, dtype={self.value.dtype})"


# ---------------------------------------------------------------------------
# convolution

@dataclass
class ConvCache:
    cols: np.ndarray
    in_shape: tuple
    weight: Param
    bias: Param


def conv2d(x, weight: Param, bias: Param):
    """3x3 cross-correlation, stride 1, zero padding 1 (resolution preserving)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input, got shape {x.shape}")
    w = weight.value
    cout, cin, kh, kw = w.shape
    if (kh, kw) != (3, 3):
        raise ShapeError(f"conv2d supports 3x3 kernels only, got {kh}x{kw}")
    if x.shape[1] != cin:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {cin}")
    cols = _im2col(x)
    # (N, C, H, W, 3, 3) x (O, C, 3, 3) -> (N, H, W, O)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out) + bias.value[None, :, None, None]
    return out, ConvCache(cols, x.shape, weight, bias)


def conv2d_backward(cache: ConvCache, grad_out):
    w = cache.weight.value
    n, c, h, wd = cache.in_shape
    cache.weight.grad += np.tensordot(grad_out, cache.cols, axes=([0, 2, 3], [0, 2, 3]))
    cache.bias.grad += grad_out.sum(axis=(0, 2, 3))
    # (N, O, H, W) x (O, C, 3, 3) -> (N, H, W, C, 3, 3), scattered back tap by tap
    gcols = np.tensordot(grad_out, w, axes=([1], [0]))
    gxp = np.zeros((n, c, h + 2, wd + 2), dtype=gcols.dtype)
    for i in range(3):
        for j in range(3):
            gxp[:, :, i:i + h, j:j + wd] += gcols[..., i, j].transpose(0, 3, 1, 2)
    return gxp[:, :, 1:-1, 1:-1]


def _im2col(x):
    """(N, C, H, W) -> (N, C, H, W, 3, 3) view of every zero-padded 3x3 neighbourhood."""
    n, c, h, wd = x.shape
    xp = np.zeros((n, c, h + 2, wd + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    return np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))


# ---------------------------------------------------------------------------
# batch normalization

@dataclass
class BatchNorm2d:
    """Per-channel affine normalization; running stats are buffers, not params."""
    scale: Param
    shift: Param
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def create(cls, channels, dtype=np.float32):
        return cls(
            scale=Param(np.ones(channels), dtype),
            shift=Param(np.zeros(channels), dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


@dataclass
class BNCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    bn: BatchNorm2d
    train: bool


def batchnorm2d(x, bn: BatchNorm2d, train=True):
    if x.shape[1] != bn.scale.size:
        raise ShapeError(f"batchnorm expects {bn.scale.size} channels, got {x.shape[1]}")
    if train:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise DegenerateBatchError("train-mode batchnorm needs at least 2 values per channel")
        mean = x.mean(axis=(0, 2, 3))
        centered = x - mean[None, :, None, None]
        var = (centered * centered).mean(axis=(0, 2, 3))
        bn.running_mean[...] = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean
        bn.running_var[...] = (1 - bn.momentum) * bn.running_var + bn.momentum * var * m / (m - 1)
    else:
        mean, var = bn.running_mean, bn.running_var
    inv_std = 1.0 / np.sqrt(var + bn.eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = bn.scale.value[None, :, None, None] * xhat + bn.shift.value[None, :, None, None]
    return out, BNCache(xhat, inv_std, bn, train)


def batchnorm2d_backward(cache: BNCache, grad_out):
    bn = cache.bn
    bn.scale.grad += (grad_out * cache.xhat).sum(axis=(0, 2, 3))
    bn.shift.grad += grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * bn.scale.value[None, :, None, None]
    inv_std = cache.inv_std[None, :, None, None]
    if not cache.train:
        return gxhat * inv_std
    # batch statistics depend on x: project out the mean and xhat directions
    mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
    mean_gx = (gxhat * cache.xhat).mean(axis=(0, 2, 3), keepdims=True)
    return inv_std * (gxhat - mean_g - cache.xhat * mean_gx)


# ---------------------------------------------------------------------------
# pointwise and structural ops

@dataclass
class LeakyCache:
    mask: np.ndarray
    slope: float


def leaky_relu(x, slope=LEAKY_SLOPE):
    mask = x >= 0
    return np.where(mask, x, slope * x), LeakyCache(mask, slope)


def leaky_relu_backward(cache: LeakyCache, grad_out):
    return np.where(cache.mask, grad_out, cache.slope * grad_out)


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concat {a.shape} and {b.shape}: N,H,W must match")
    return np.concatenate([a, b], axis=1)


def split_channels(grad, ca):
    return grad[:, :ca], grad[:, ca:]


def global_avg_pool(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_pool_backward(shape, grad_out):
    n, c, h, w = shape
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w), shape).copy()


@dataclass
class LinearCache:
    x: np.ndarray
    weight: Param
    bias: Param


def linear(x, weight: Param, bias: Param):
    """Dense layer, weight shaped (out, in)."""
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear expects {weight.shape[1]} features, got {x.shape[1]}")
    return x @ weight.value.T + bias.value, LinearCache(x, weight, bias)


def linear_backward(cache: LinearCache, grad_out):
    cache.weight.grad += grad_out.T @ cache.x
    cache.bias.grad += grad_out.sum(axis=0)
    return grad_out @ cache.weight.value


# ---------------------------------------------------------------------------
# conv + BN + leaky block shared by the enhancement network and the toy head

@dataclass
class ConvBlock:
    weight: Param
    bias: Param
    bn: BatchNorm2d

    @classmethod
    def create(cls, cin, cout, rng, dtype=np.float32, slope=LEAKY_SLOPE):
        return cls(
            weight=Param(kaiming_normal(rng, (cout, cin, 3, 3), slope), dtype),
            bias=Param(np.zeros(cout), dtype),
            bn=BatchNorm2d.create(cout, dtype),
        )

    def named_params(self, prefix):
        return {
            f"{prefix}.conv.weight": self.weight,
            f"{prefix}.conv.bias": self.bias,
            f"{prefix}.bn.scale": self.bn.scale,
            f"{prefix}.bn.shift": self.bn.shift,
        }

    def named_buffers(self, prefix):
        return {
            f"{prefix}.bn.running_mean": self.bn.running_mean,
            f"{prefix}.bn.running_var": self.bn.running_var,
        }


@dataclass
class BlockCache:
    conv: ConvCache
    bn: BNCache
    act: LeakyCache


def conv_block(x, block: ConvBlock, train=True):
    y, c1 = conv2d(x, block.weight, block.bias)
    y, c2 = batchnorm2d(y, block.bn, train)
    y, c3 = leaky_relu(y)
    return y, BlockCache(c1, c2, c3)


def conv_block_backward(cache: BlockCache, grad_out):
    g = leaky_relu_backward(cache.act, grad_out)
    g = batchnorm2d_backward(cache.bn, g)
    return conv2d_backward(cache.conv, g)


def kaiming_normal(rng, shape, slope=LEAKY_SLOPE):
    """Zero-mean normal with std gain/sqrt(fan_in), gain tuned for a leaky rectifier."""
    fan_in = int(np.prod(shape[1:]))
    gain = np.sqrt(2.0 / (1.0 + slope ** 2))
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)


_LEAVES = (np.ndarray, Param, BatchNorm2d, ConvCache, BNCache, LinearCache, float, int, str, bool, type(None))


def leaky_masks(cache):
    """Collect every leaky-rectifier sign mask reachable from a cache tree.

    Used by the gradient checker to detect finite-difference steps that
    straddle a kink.
    """
    out = []
    _walk_masks(cache, out)
    return out


def _walk_masks(obj, out):
    if isinstance(obj, _LEAVES):
        return
    if isinstance(obj, BlockCache):
        out.append(obj.act.mask)
    elif isinstance(obj, LeakyCache):
        out.append(obj.mask)
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            _walk_masks(item, out)
    elif isinstance(obj, dict):
        for item in obj.values():
            _walk_masks(item, out)
    elif hasattr(obj, "__dataclass_fields__"):
        for name in obj.__dataclass_fields__:
            _walk_masks(getattr(obj, name), out)


def cast(model, dtype):
    """Deep copy of a weight container with every param and buffer in ``dtype``."""
    new = copy.deepcopy(model)
    _cast_inplace(new, dtype)
    return new


def _cast_inplace(obj, dtype):
    if isinstance(obj, Param):
        obj.value = obj.value.astype(dtype)
        obj.grad = np.zeros_like(obj.value)
    elif isinstance(obj, BatchNorm2d):
        obj.running_mean = obj.running_mean.astype(dtype)
        obj.running_var = obj.running_var.astype(dtype)
        _cast_inplace(obj.scale, dtype)
        _cast_inplace(obj.shift, dtype)
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            _cast_inplace(item, dtype)
    elif hasattr(obj, "__dataclass_fields__"):
        for name in obj.__dataclass_fields__:
            _cast_inplace(getattr(obj, name), dtype)
