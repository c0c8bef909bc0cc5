"""The trainable stack: gamma stage -> guided enhancement -> toy head -> loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gge, ggle, surrogate
from .tensor import cast


@dataclass
class Model:
    gamma: gge.GammaParams
    enhance: ggle.GgleWeights
    head: surrogate.ToyHead

    @property
    def mode(self):
        return self.enhance.mode

    def named_params(self):
        out = dict(self.gamma.named_params("gge"))
        out.update(self.enhance.named_params("ggle"))
        out.update(self.head.named_params("head"))
        return out

    def named_buffers(self):
        out = dict(self.enhance.named_buffers("ggle"))
        out.update(self.head.named_buffers("head"))
        return out

    def zero_grad(self):
        for p in self.named_params().values():
            p.zero_grad()

    def astype(self, dtype):
        return cast(self, dtype)


def init_model(mode="GG", seed=0, gamma_min=gge.GAMMA_MIN, gamma_max=gge.GAMMA_MAX,
               dtype=np.float32) -> Model:
    # independent streams for the two networks so changing the mode leaves the head alone
    ss = np.random.SeedSequence(seed)
    s_enh, s_head = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    return Model(
        gge.GammaParams.create(gamma_min, gamma_max, dtype=dtype),
        ggle.init_ggle(mode, s_enh, dtype),
        surrogate.init_head(s_head, dtype),
    )


def enhance(model: Model, packed, train=False):
    """Packed (N, 4, H, W) in [0, 1] -> enhanced (N, 3, H, W)."""
    xg, _ = gge.gge_forward(packed, model.gamma)
    out, _ = ggle.ggle_forward(xg, model.enhance, train)
    return out


def forward_loss(model: Model, packed, labels, targets, lam=surrogate.DEFAULT_LAMBDA, train=True):
    """Mean total loss over the batch plus everything backward() needs."""
    xg, c_gge = gge.gge_forward(packed, model.gamma)
    xhat, c_ggle = ggle.ggle_forward(xg, model.enhance, train)
    logit, reg, c_head = surrogate.head_forward(xhat, model.head, train)
    losses, dlogit, dreg = surrogate.total_loss(logit, reg, labels, targets, lam)
    n = losses.shape[0]
    return float(losses.mean()), (c_gge, c_ggle, c_head, dlogit / n, dreg / n)


def backward(cache):
    c_gge, c_ggle, c_head, dlogit, dreg = cache
    g = surrogate.head_backward(c_head, dlogit, dreg)
    g = ggle.ggle_backward(c_ggle, g)
    return gge.gge_backward(c_gge, g)
