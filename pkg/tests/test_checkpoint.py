import json

import numpy as np
import pytest

from rawenhance import rten
from rawenhance.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from rawenhance.model import enhance, init_model


def test_roundtrip(tmp_path, rng):
    m = init_model("RB", seed=3)
    m.gamma.alpha.value[...] = [0.1, 0.2, -0.3, 0.4]
    m.enhance.f_l[0].bn.running_var[...] = 2.5
    save_checkpoint(m, tmp_path)
    back = load_checkpoint(tmp_path, "RB")
    x = rng.uniform(size=(1, 4, 6, 6)).astype(np.float32)
    assert enhance(m, x).tobytes() == enhance(back, x).tobytes()
    np.testing.assert_array_equal(back.enhance.f_l[0].bn.running_var, 2.5)


def test_manifest_names(tmp_path):
    save_checkpoint(init_model("GG"), tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["mode"] == "GG"
    assert man["tensors"]["ggle.f_l.0.conv.weight"] == "ggle.f_l.0.conv.weight.rten"
    assert rten.load(tmp_path / "ggle.f_l.0.conv.weight.rten").shape == (8, 4, 3, 3)
    gam = json.loads((tmp_path / "gge.json").read_text())
    assert set(gam) == {"alpha", "gamma_min", "gamma_max"}


def test_mode_mismatch(tmp_path):
    save_checkpoint(init_model("GG"), tmp_path)
    with pytest.raises(CheckpointError, match="mode"):
        load_checkpoint(tmp_path, "RGGB")


def test_foreign_architecture(tmp_path):
    save_checkpoint(init_model("None"), tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    man["mode"] = "GG"
    (tmp_path / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(CheckpointError, match="lacks"):
        load_checkpoint(tmp_path)


def test_shape_mismatch(tmp_path):
    save_checkpoint(init_model("GG"), tmp_path)
    rten.save(tmp_path / "ggle.fusion.bias.rten", np.zeros(5, dtype=np.float32))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path)


def test_missing_dir(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope")
