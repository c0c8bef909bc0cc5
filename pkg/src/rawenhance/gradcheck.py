"""Finite-difference verification of every hand-written backward pass.

Comparisons run on a float64 copy of the model. A central difference
whose +/-h probes flip the sign of any leaky-rectifier input straddles a
kink and is not a valid derivative estimate; such coordinates are re-probed
with a step shrunk by 10x until no sign flips (or the step floor is hit).
"""
from __future__ import annotations

import numpy as np

from . import gge, ggle, surrogate
from .model import backward, forward_loss, init_model
from .tensor import leaky_masks

PIPELINES = ("gge", "ggle", "gge+ggle", "full")
DEFAULT_H = 1e-3
SIZE = 8
METHODS = ("central", "richardson", "adaptive")
TOLERANCE = 1e-4


def rel_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _same_masks(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_params(loss_fn, params, h=DEFAULT_H, refine_kinks=True, method="adaptive",
                 escalate=None, tol=TOLERANCE):
    """Largest relative error between analytic and finite-difference grads.

    ``loss_fn(backprop)`` runs a forward pass at the current parameter values,
    returning (loss, cache); with ``backprop`` set it must also accumulate
    analytic grads into the params.

    ``method``:
      - ``"central"``: plain central difference at step h.
      - ``"richardson"``: central differences at h and h/2 combined to
        cancel the h**2 truncation term.
      - ``"adaptive"``: central first; coordinates above ``tol`` are
        re-measured with Richardson, then (if ``escalate`` is given) with
        Richardson on ``escalate``, an extended-precision ``(loss_fn,
        params)`` twin of the same problem. Each stage is a strictly more
        accurate oracle, so a wrong analytic gradient still shows up; what
        goes away is truncation error at near-zero gradients and float64
        rounding of the loss, e.g. for a conv bias feeding straight into
        batch norm, whose true gradient is zero.

    Returns (max_error, worst_name).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    probe = _Prober(loss_fn, params, h, refine_kinks)
    hi = None
    worst, worst_name = 0.0, None
    for name, p in params.items():
        for k in range(p.size):
            if method != "adaptive":
                err = probe.error(name, k, method)
            else:
                err = probe.error(name, k, "central")
                if err > tol:
                    err = probe.error(name, k, "richardson")
                if err > tol and escalate is not None:
                    if hi is None:
                        hi = _Prober(*escalate, h, refine_kinks)
                    err = hi.error(name, k, "richardson")
            if err > worst:
                worst, worst_name = err, f"{name}[{k}]"
    return worst, worst_name


class _Prober:
    """Analytic grads at the base point plus per-coordinate numeric probes."""

    def __init__(self, loss_fn, params, h, refine_kinks, min_h=1e-7):
        self.loss_fn, self.params = loss_fn, params
        self.h, self.refine, self.min_h = h, refine_kinks, min_h
        for p in params.values():
            p.zero_grad()
        _, cache = loss_fn(True)
        self.base_masks = leaky_masks(cache)
        self.analytic = {n: p.grad.reshape(-1).copy() for n, p in params.items()}

    def error(self, name, k, method):
        flat = self.params[name].value.reshape(-1)
        step = self.h
        while True:
            numeric, masks = _central(self.loss_fn, flat, k, step, method)
            if not self.refine or step / 10 < self.min_h:
                break
            if all(_same_masks(self.base_masks, m) for m in masks):
                break
            step /= 10
        return rel_error(float(self.analytic[name][k]), float(numeric))


def _central(loss_fn, flat, k, step, method):
    """Finite-difference derivative along coordinate k plus every probe's masks."""
    orig = flat[k]
    steps = (step,) if method == "central" else (step, step / 2)
    estimates, masks = [], []
    for s in steps:
        flat[k] = orig + s
        fp, cp = loss_fn(False)
        flat[k] = orig - s
        fm, cm = loss_fn(False)
        flat[k] = orig
        estimates.append((fp - fm) / (2 * s))
        masks += [leaky_masks(cp), leaky_masks(cm)]
    if method == "central":
        return estimates[0], masks
    return (4 * estimates[1] - estimates[0]) / 3, masks


def _projection_loss(out, weights):
    """Scalar sum(w * out) and its gradient; w is normalized so the loss is O(1)."""
    return float((weights * out).sum()), weights


def build_problem(pipeline, seed, dtype=np.float64, size=SIZE, batch=2, mode="GG"):
    """Random float64 model, input and loss closure for one pipeline selector.

    Returns (loss_fn, params) suitable for :func:`check_params`.
    """
    if pipeline not in PIPELINES:
        raise ValueError(f"unknown pipeline {pipeline!r}; choose from {', '.join(PIPELINES)}")
    rng = np.random.default_rng(seed)
    model = init_model(mode, seed=int(rng.integers(2 ** 31)), dtype=dtype)
    model.gamma.alpha.value[...] = rng.normal(0.0, 0.5, size=4)
    # perturb BN affine params away from (1, 0) so their gradients are generic
    for name, p in model.named_params().items():
        if name.endswith("bn.scale"):
            p.value[...] = rng.uniform(0.5, 1.5, size=p.shape)
        elif name.endswith("bn.shift") or name.endswith("bias"):
            p.value[...] = rng.normal(0.0, 0.2, size=p.shape)

    packed = rng.uniform(0.0, 1.0, size=(batch, 4, size, size)).astype(dtype)

    if pipeline == "gge":
        proj = rng.normal(size=(batch, 4, size, size)) / packed.size

        def loss_fn(backprop):
            out, cache = gge.gge_forward(packed, model.gamma)
            loss, g = _projection_loss(out, proj)
            if backprop:
                gge.gge_backward(cache, g)
            return loss, cache
        return loss_fn, model.gamma.named_params()

    if pipeline == "ggle":
        x_gamma = rng.uniform(0.0, 255.0, size=(batch, 4, size, size)).astype(dtype)
        proj = rng.normal(size=(batch, 3, size, size)) / (batch * 3 * size * size)

        def loss_fn(backprop):
            out, cache = ggle.ggle_forward(x_gamma, model.enhance, train=True)
            loss, g = _projection_loss(out, proj)
            if backprop:
                ggle.ggle_backward(cache, g)
            return loss, cache
        return loss_fn, model.enhance.named_params()

    if pipeline == "gge+ggle":
        proj = rng.normal(size=(batch, 3, size, size)) / (batch * 3 * size * size)
        params = dict(model.gamma.named_params())
        params.update(model.enhance.named_params())

        def loss_fn(backprop):
            xg, c1 = gge.gge_forward(packed, model.gamma)
            out, c2 = ggle.ggle_forward(xg, model.enhance, train=True)
            loss, g = _projection_loss(out, proj)
            if backprop:
                gge.gge_backward(c1, ggle.ggle_backward(c2, g))
            return loss, (c1, c2)
        return loss_fn, params

    labels = (np.arange(batch) % 2 == 0).astype(np.float64)
    targets = rng.uniform(0.1, 0.9, size=(batch, 2)) * labels[:, None]

    def loss_fn(backprop):
        loss, cache = forward_loss(model, packed, labels, targets, surrogate.DEFAULT_LAMBDA, train=True)
        if backprop:
            backward(cache)
        return loss, cache
    return loss_fn, model.named_params()


def grad_check(pipeline="full", seed=0, h=DEFAULT_H, refine_kinks=True, method="adaptive",
               mode="GG", escalate=True, return_worst=False):
    """Max relative gradient error over all parameters of the selected pipeline.

    The float64 problem is checked first; ``escalate`` builds the
    extended-precision twin used by the adaptive method (see
    :func:`check_params`).
    """
    loss_fn, params = build_problem(pipeline, seed, mode=mode)
    twin = build_problem(pipeline, seed, dtype=np.longdouble, mode=mode) if escalate else None
    err, worst = check_params(loss_fn, params, h, refine_kinks, method, escalate=twin)
    return (err, worst) if return_worst else err
