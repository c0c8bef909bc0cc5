"""Toy detection-like task: is there a bright square, and where is its center.

Stands in for a real detector so the enhancement stages can be trained end
to end. The head is conv block -> global average pool -> linear(8 -> 3),
producing one classification logit and a 2-vector center estimate.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .bayer import BayerFrame, SensorModel, load_bayer, save_bayer, synthesize_raw
from .tensor import (
    ConvBlock,
    Param,
    conv_block,
    conv_block_backward,
    global_avg_pool,
    global_avg_pool_backward,
    linear,
    linear_backward,
)

DEFAULT_LAMBDA = 3.0
FRAME_SIZE = 32        # mosaic side; packed side is half
SQUARE_SIZE = 8        # mosaic pixels
BACKGROUND = 0.05
SQUARE_RADIANCE = 0.5


@dataclass
class ToySample:
    frame: BayerFrame
    cls_label: int
    reg_target: tuple | None = None   # (x, y) of the square center, normalized

    def __post_init__(self):
        if self.cls_label not in (0, 1):
            raise ValueError("cls_label must be 0 or 1")
        if self.cls_label == 1:
            if self.reg_target is None or not all(0 <= t <= 1 for t in self.reg_target):
                raise ValueError("positive samples need a reg_target in [0, 1]^2")
            self.reg_target = tuple(float(t) for t in self.reg_target)
        else:
            self.reg_target = None

    def target_array(self):
        return np.zeros(2) if self.reg_target is None else np.array(self.reg_target)


def make_scene(size=FRAME_SIZE, center=None, square=SQUARE_SIZE,
               background=BACKGROUND, radiance=SQUARE_RADIANCE):
    """Gray radiance map with an optional bright square centered at ``center`` (x, y) pixels."""
    scene = np.full((size, size, 3), background)
    if center is not None:
        x0 = int(round(center[0] - square / 2))
        y0 = int(round(center[1] - square / 2))
        scene[y0:y0 + square, x0:x0 + square] = radiance
    return scene


def make_dataset(n, model: SensorModel, seed=0, size=FRAME_SIZE, square=SQUARE_SIZE):
    """Deterministic balanced dataset; each sample gets its own spawned RNG stream."""
    if n < 1:
        raise ValueError("n must be >= 1")
    root = np.random.SeedSequence(seed)
    labels = np.zeros(n, dtype=int)
    labels[: n // 2] = 1
    labels = np.random.default_rng(root.spawn(1)[0]).permutation(labels)
    samples = []
    half = square // 2
    for label, child in zip(labels, root.spawn(n)):
        rng = np.random.default_rng(child)
        if label:
            cx, cy = rng.integers(half, size - half + 1, size=2)
            scene = make_scene(size, (cx, cy), square)
            target = (cx / size, cy / size)
        else:
            scene = make_scene(size, None, square)
            target = None
        samples.append(ToySample(synthesize_raw(scene, model, rng), int(label), target))
    return samples


def save_dataset(samples, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        pgm, meta = f"sample_{i:05d}.pgm", f"sample_{i:05d}.json"
        save_bayer(s.frame, os.path.join(out_dir, pgm), os.path.join(out_dir, meta))
        entries.append({"pgm": pgm, "meta": meta, "label": s.cls_label,
                        "reg_target": None if s.reg_target is None else list(s.reg_target)})
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump({"samples": entries}, f, indent=1)
    return path


def load_dataset(manifest_path):
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as f:
        manifest = json.load(f)
    out = []
    for e in manifest["samples"]:
        frame = load_bayer(os.path.join(base, e["pgm"]), os.path.join(base, e["meta"]))
        out.append(ToySample(frame, int(e["label"]), e.get("reg_target")))
    return out


# ---------------------------------------------------------------------------
# head

@dataclass
class ToyHead:
    block: ConvBlock
    weight: Param     # (3, 8)
    bias: Param

    def named_params(self, prefix="head"):
        out = self.block.named_params(f"{prefix}.block")
        out[f"{prefix}.linear.weight"] = self.weight
        out[f"{prefix}.linear.bias"] = self.bias
        return out

    def named_buffers(self, prefix="head"):
        return self.block.named_buffers(f"{prefix}.block")


def init_head(seed=0, dtype=np.float32) -> ToyHead:
    rng = np.random.default_rng(seed)
    block = ConvBlock.create(3, 8, rng, dtype)
    w = rng.normal(0.0, 1.0 / np.sqrt(8), size=(3, 8))
    return ToyHead(block, Param(w, dtype), Param(np.zeros(3), dtype))


def head_forward(x, head: ToyHead, train=True):
    """(N, 3, H, W) -> logits (N,), reg (N, 2)."""
    h, c_block = conv_block(x, head.block, train)
    pooled, shape = global_avg_pool(h)
    out, c_lin = linear(pooled, head.weight, head.bias)
    return out[:, 0], out[:, 1:3], (c_block, shape, c_lin)


def head_backward(cache, grad_logit, grad_reg):
    c_block, shape, c_lin = cache
    g = np.concatenate([grad_logit[:, None], grad_reg], axis=1)
    g = linear_backward(c_lin, g)
    g = global_avg_pool_backward(shape, g)
    return conv_block_backward(c_block, g)


# ---------------------------------------------------------------------------
# loss

def combine_losses(l_cls, l_reg, lam=DEFAULT_LAMBDA):
    return l_cls + lam * l_reg


def bce_with_logits(logit, label):
    z = np.asarray(logit, dtype=np.float64)
    return np.maximum(z, 0) - z * label + np.log1p(np.exp(-np.abs(z)))


def total_loss(cls_logit, reg_pred, label, reg_target, lam=DEFAULT_LAMBDA):
    """Per-sample classification + lam * masked squared-error regression.

    Vectorized over a leading batch axis. Returns (losses, dlogit, dreg);
    the gradients are of the per-sample losses.
    """
    logit = np.asarray(cls_logit)
    reg = np.asarray(reg_pred)
    if not (np.all(np.isfinite(logit)) and np.all(np.isfinite(reg))):
        raise FloatingPointError("non-finite prediction passed to total_loss")
    label = np.asarray(label, dtype=np.float64)
    target = np.asarray(reg_target, dtype=np.float64)
    diff = reg.astype(np.float64) - target
    mask = label[..., None] if label.ndim else label
    l_cls = bce_with_logits(logit, label)
    l_reg = (mask * diff ** 2).sum(axis=-1)
    losses = combine_losses(l_cls, l_reg, lam)
    prob = 0.5 * (1.0 + np.tanh(logit.astype(np.float64) / 2))   # overflow-free sigmoid
    dlogit = prob - label
    dreg = lam * 2 * mask * diff
    return losses, dlogit.astype(logit.dtype), dreg.astype(reg.dtype)


def batch_targets(samples):
    labels = np.array([s.cls_label for s in samples], dtype=np.float64)
    targets = np.stack([s.target_array() for s in samples])
    return labels, targets
