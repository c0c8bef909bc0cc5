"""Checkpoint directories: a JSON manifest plus one RTEN file per tensor."""
from __future__ import annotations

import json
import os

import numpy as np

from . import ggle, rten
from .gge import GammaParams
from .model import Model, init_model

MANIFEST = "manifest.json"
GAMMA_FILE = "gge.json"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Model, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    tensors = {}
    items = list(model.named_params().items()) + list(model.named_buffers().items())
    for name, t in sorted(items):
        value = t.value if hasattr(t, "value") else t
        fname = name + ".rten"
        rten.save(os.path.join(out_dir, fname), value)
        tensors[name] = fname
    with open(os.path.join(out_dir, GAMMA_FILE), "w") as f:
        json.dump(model.gamma.to_dict(), f)
    manifest = {"mode": model.mode, "gamma": GAMMA_FILE, "tensors": tensors}
    with open(os.path.join(out_dir, MANIFEST), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def load_checkpoint(ckpt_dir, mode=None) -> Model:
    """Load a checkpoint; ``mode`` (if given) must match the stored architecture."""
    try:
        with open(os.path.join(ckpt_dir, MANIFEST)) as f:
            manifest = json.load(f)
        with open(os.path.join(ckpt_dir, manifest.get("gamma", GAMMA_FILE))) as f:
            gamma = GammaParams.from_dict(json.load(f))
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise CheckpointError(f"unreadable checkpoint in {ckpt_dir}: {e}") from None
    stored_mode = manifest.get("mode")
    if mode is not None and stored_mode is not None and mode != stored_mode:
        raise CheckpointError(f"checkpoint was trained with mode {stored_mode}, requested {mode}")
    mode = mode or stored_mode
    try:
        ggle.check_mode(mode)
    except ValueError as e:
        raise CheckpointError(str(e)) from None
    model = init_model(mode, seed=0)
    model.gamma = gamma

    params = model.named_params()
    buffers = model.named_buffers()
    tensors = manifest.get("tensors", {})
    expected = set(params) | set(buffers)
    expected.discard("gge.alpha")
    missing = expected - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors for mode {mode}: {sorted(missing)[:4]}")
    extra = set(tensors) - expected - {"gge.alpha"}
    if extra:
        raise CheckpointError(f"checkpoint has tensors foreign to mode {mode}: {sorted(extra)[:4]}")
    for name in sorted(expected):
        try:
            value = rten.load(os.path.join(ckpt_dir, tensors[name]))
        except (OSError, rten.RtenError) as e:
            raise CheckpointError(f"{name}: {e}") from None
        target = params[name].value if name in params else buffers[name]
        if value.shape != target.shape:
            raise CheckpointError(f"{name}: shape {value.shape} does not match {target.shape}")
        target[...] = value
    return model
