"""Joint SGD training of the gamma stage, the guided enhancer and the toy head."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import gge, ggle
from .bayer import pack
from .checkpoint import save_checkpoint
from .model import Model, backward, forward_loss, init_model
from .surrogate import batch_targets


class ConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    warmup_epochs: int = 2
    batch_size: int = 8
    base_lr: float = 0.01
    min_lr: float = 1e-4
    momentum: float = 0.9
    lam: float = 3.0
    seed: int = 0
    gamma_min: float = gge.GAMMA_MIN
    gamma_max: float = gge.GAMMA_MAX
    guidance_mode: str = "GG"
    freeze_gge: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs and warmup_epochs must be >= 0")
        if self.epochs > 0 and not self.warmup_epochs < self.epochs:
            raise ConfigError("warmup_epochs must be < epochs")
        if not self.base_lr > self.min_lr >= 0:
            raise ConfigError("need base_lr > min_lr >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.gamma_min < self.gamma_max:
            raise ConfigError("need 0 < gamma_min < gamma_max")
        try:
            ggle.check_mode(self.guidance_mode)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class EpochLog:
    epoch: int
    loss: float
    lr: float
    gamma: list

    def line(self):
        gam = ",".join(f"{g:.6f}" for g in self.gamma)
        return f"epoch={self.epoch} loss={self.loss:.6f} lr={self.lr:.6g} gamma=[{gam}]"


@dataclass
class TrainReport:
    config: TrainConfig
    model: Model
    initial_loss: float
    final_loss: float
    epochs: list = field(default_factory=list)
    steps: int = 0

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "steps": self.steps,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "initial_gamma": [gge.midpoint_gamma(self.config.gamma_min, self.config.gamma_max)] * 4,
            "epochs": [asdict(e) for e in self.epochs],
        }

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(self.model, os.path.join(out_dir, "checkpoint"))
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(self.to_dict(), f, indent=1)


# ---------------------------------------------------------------------------
# schedule and optimizer

def lr_at(step, total_steps, warmup_steps, base_lr, min_lr):
    """Linear warmup from 0 to base_lr, then cosine decay to min_lr at total_steps."""
    if total_steps <= warmup_steps:
        raise ConfigError("total_steps must exceed warmup_steps")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    t = (step - warmup_steps) / (total_steps - warmup_steps)
    return min_lr + (base_lr - min_lr) * (1 + math.cos(math.pi * t)) / 2


def sgd_step(params, velocity, lr, momentum=0.9):
    """Heavy-ball update over dicts of params and velocity buffers, then zero grads.

    v <- momentum * v + g;  p <- p - lr * v
    """
    for name, p in params.items():
        v = velocity[name]
        v *= momentum
        v += p.grad
        p.value -= (lr * v).astype(p.value.dtype)
        p.zero_grad()


class SGD:
    def __init__(self, params, momentum=0.9, frozen=()):
        self.params = params
        self.momentum = momentum
        self.frozen = set(frozen)
        self.velocity = {name: np.zeros_like(p.value) for name, p in params.items()}

    def step(self, lr):
        live = {n: p for n, p in self.params.items() if n not in self.frozen}
        sgd_step(live, self.velocity, lr, self.momentum)
        for n in self.frozen:
            self.params[n].zero_grad()


# ---------------------------------------------------------------------------
# training loop

def _batches(order, size):
    return [order[i:i + size] for i in range(0, len(order), size)]


def _prepare(dataset):
    packed = np.stack([pack(s.frame) for s in dataset])
    labels, targets = batch_targets(dataset)
    return packed, labels, targets


def dataset_loss(model, data, batch_size, lam):
    """Mean per-sample loss over the whole dataset in fixed order, no updates."""
    packed, labels, targets = data
    n = len(labels)
    total = 0.0
    for idx in _batches(np.arange(n), batch_size):
        loss, _ = forward_loss(model, packed[idx], labels[idx], targets[idx], lam, train=True)
        total += loss * len(idx)
    return total / n


def train(cfg: TrainConfig, dataset, log=None) -> TrainReport:
    """Train GGE + GGLE + head jointly; deterministic for a fixed ``cfg.seed``.

    ``log`` receives one progress line per epoch. Raises TrainingDiverged if
    a batch loss turns non-finite or exceeds 100x the initial dataset loss.
    """
    cfg.validate()
    if not dataset:
        raise ValueError("dataset is empty")
    model = init_model(cfg.guidance_mode, cfg.seed, cfg.gamma_min, cfg.gamma_max)
    data = _prepare(dataset)
    n = len(dataset)
    # the initial-loss pass must not leak into the running statistics
    initial = dataset_loss(model.astype(np.float32), data, cfg.batch_size, cfg.lam)
    report = TrainReport(cfg, model, initial, initial)
    if cfg.epochs == 0:
        return report

    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    params = model.named_params()
    frozen = model.gamma.named_params("gge") if cfg.freeze_gge else {}
    opt = SGD(params, cfg.momentum, frozen)
    shuffle_root = np.random.SeedSequence([cfg.seed, 1])
    epoch_seeds = shuffle_root.spawn(cfg.epochs)
    packed, labels, targets = data

    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(epoch_seeds[epoch]).permutation(n)
        losses = []
        lr = 0.0
        for idx in _batches(order, cfg.batch_size):
            lr = lr_at(step, total, warmup, cfg.base_lr, cfg.min_lr)
            loss, cache = forward_loss(model, packed[idx], labels[idx], targets[idx], cfg.lam, train=True)
            if not math.isfinite(loss) or loss > 100 * initial:
                raise TrainingDiverged(f"loss {loss} at epoch {epoch} step {step} (initial {initial})")
            backward(cache)
            opt.step(lr)
            losses.append(loss)
            step += 1
        entry = EpochLog(epoch, float(np.mean(losses)), float(lr), [float(g) for g in model.gamma.gammas()])
        report.epochs.append(entry)
        if log is not None:
            log(entry.line())
    report.steps = step
    report.final_loss = dataset_loss(model.astype(np.float32), data, cfg.batch_size, cfg.lam)
    return report
