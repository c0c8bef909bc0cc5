"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line (visible without -s)
before asserting, so the run log doubles as the acceptance report.
"""
import copy
import time

import numpy as np
import pytest

from rawenhance import gge, ggle
from rawenhance.analysis import ablation_csv, channel_snr, run_ablation
from rawenhance.bayer import BayerFrame, SensorModel, pack, synthesize_raw, unpack
from rawenhance.checkpoint import save_checkpoint
from rawenhance.gradcheck import PIPELINES, grad_check
from rawenhance.surrogate import make_dataset
from rawenhance.trainer import TrainConfig, lr_at, train

# 200 samples / batch 8 = 25 steps per epoch; 20 epochs = 500 iterations
TRAIN_N, TRAIN_EPOCHS, TRAIN_BATCH = 200, 20, 8


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def toy_dataset():
    return make_dataset(TRAIN_N, SensorModel(), seed=0)


def _train_cfg(**kw):
    base = dict(epochs=TRAIN_EPOCHS, warmup_epochs=2, batch_size=TRAIN_BATCH, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_c1_parameter_budget(verdict):
    t0 = time.perf_counter()
    n_gge = gge.param_count(gge.GammaParams.create())
    counts = {m: ggle.param_count(ggle.init_ggle(m)) + n_gge for m in ggle.MODES}
    dt = time.perf_counter() - t0
    ok = n_gge == 4 and counts["GG"] == 1519 and max(counts.values()) <= 3000 and dt < 1
    verdict(1, ok, f"gge={n_gge} totals={counts} ({dt:.2f}s)")


@pytest.mark.slow
def test_c2_gradient_oracle(verdict):
    t0 = time.perf_counter()
    worst = {}
    for pipeline in PIPELINES:
        worst[pipeline] = max(grad_check(pipeline, seed) for seed in range(10))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) <= 1e-4 and dt < 120
    detail = " ".join(f"{p}={e:.2e}" for p, e in worst.items())
    verdict(2, ok, f"max rel error over 10 seeds: {detail} ({dt:.1f}s)")


def test_c3_gamma_bounds(verdict):
    alphas = np.random.default_rng(0).normal(0, 4, size=10_000)
    g = gge.gamma_of_alpha(alphas)
    inside = bool(np.all((g > gge.GAMMA_MIN) & (g < gge.GAMMA_MAX)))
    order = np.argsort(alphas)
    monotone = bool(np.all(np.diff(g[order]) >= 0))
    mid = float(gge.gamma_of_alpha(0.0))
    ok = inside and monotone and abs(mid - 0.1190476) <= 1e-6
    verdict(3, ok, f"10k alphas strictly inside={inside} monotone={monotone} gamma(0)={mid:.7f}")


def test_c4_gamma_transform(verdict):
    p = gge.GammaParams.create(0.25, 0.75, dtype=np.float64)   # alpha 0 -> gamma 0.5
    out, _ = gge.gge_forward(np.full((4, 1, 2), [[1.0, 0.25]]), p)
    one = bool(np.all(out[:, 0, 0] == 255.0))
    quarter = float(np.abs(out[:, 0, 1] - 127.5).max())
    r = np.random.default_rng(1)
    x = np.sort(r.uniform(0, 1, size=(4, 1, 1000)), axis=-1)
    mono, _ = gge.gge_forward(x, gge.GammaParams.create(alpha=r.normal(size=4), dtype=np.float64))
    monotone = bool(np.all(np.diff(mono, axis=-1) >= 0))
    ok = one and quarter <= 1e-4 and monotone
    verdict(4, ok, f"G(1)=255 exact={one} |G(0.25;0.5)-127.5|={quarter:.1e} monotone={monotone}")


def test_c5_pack_roundtrip(verdict):
    t0 = time.perf_counter()
    r = np.random.default_rng(2)
    exact = 0
    for _ in range(100):
        black = int(r.integers(0, 2048))
        white = int(r.integers(black + 1, 65536))
        h, w = 2 * r.integers(1, 33, size=2)
        s = r.integers(black, white + 1, size=(h, w)).astype(np.uint16)
        exact += np.array_equal(unpack(pack(BayerFrame(s, black, white)), black, white).samples, s)
    dt = time.perf_counter() - t0
    verdict(5, exact == 100 and dt < 5, f"{exact}/100 frames exact ({dt:.2f}s)")


def test_c6_green_snr(verdict):
    t0 = time.perf_counter()
    model = SensorModel(quantum_efficiency=(0.25, 0.5, 0.25), exposure=40, read_noise_sigma=3, seed=0)
    rng = np.random.default_rng(model.seed)
    scene = np.full((64, 64, 3), 0.5)
    snr = np.array([[s.snr_db for s in channel_snr(pack(synthesize_raw(scene, model, rng)))]
                    for _ in range(50)])
    r, g, b = snr.mean(axis=0)
    dt = time.perf_counter() - t0
    ok = g - r >= 3 and g - b >= 3 and dt < 30
    verdict(6, ok, f"mean SNR dB R={r:.2f} G={g:.2f} B={b:.2f}; G-R={g - r:.2f} G-B={g - b:.2f} ({dt:.1f}s)")


def _ckpt_bytes(model, path):
    save_checkpoint(model, path)
    return {f.name: f.read_bytes() for f in sorted(path.iterdir())}


@pytest.mark.slow
def test_c7_training_smoke(verdict, toy_dataset, tmp_path):
    t0 = time.perf_counter()
    rep = train(_train_cfg(), toy_dataset)
    again = train(_train_cfg(), toy_dataset)
    frozen = train(_train_cfg(freeze_gge=True), toy_dataset)
    dt = time.perf_counter() - t0

    ratio = rep.final_loss / rep.initial_loss
    in_bounds = all(gge.GAMMA_MIN < g < gge.GAMMA_MAX for e in rep.epochs for g in e.gamma)
    constant = all(e.gamma == frozen.epochs[0].gamma for e in frozen.epochs)
    identical = _ckpt_bytes(rep.model, tmp_path / "a") == _ckpt_bytes(again.model, tmp_path / "b")
    ok = rep.steps == 500 and ratio <= 0.5 and in_bounds and constant and identical and dt < 600
    verdict(7, ok, f"{rep.steps} iters loss {rep.initial_loss:.3f}->{rep.final_loss:.3f} "
                   f"(ratio {ratio:.3f}); gamma in bounds={in_bounds}; frozen constant={constant}; "
                   f"bit-identical={identical}; gamma end={[round(g, 5) for g in rep.epochs[-1].gamma]} ({dt:.0f}s)")


def test_c8_fusion_wiring(verdict):
    x = np.random.default_rng(3).uniform(0, 255, size=(2, 4, 6, 6)).astype(np.float32)
    w = ggle.init_ggle("GG", seed=1)
    z = copy.deepcopy(w)
    z.fusion_weight.value[...] = 0
    z.fusion_bias.value[...] = 0
    zero = bool(np.all(ggle.ggle_forward(x, z)[0] == 0))
    none = ggle.GgleWeights("None", copy.deepcopy(w.f_l), None, w.fusion_weight, w.fusion_bias)
    a, _ = ggle.ggle_forward(x, w, zero_guidance=True)
    b, _ = ggle.ggle_forward(x, none)
    same = a.tobytes() == b.tobytes()
    verdict(8, zero and same, f"zero fusion -> 0: {zero}; zeroed guidance == None mode (bitwise): {same}")


def test_c9_schedule(verdict):
    cfg = TrainConfig()
    spe = 25
    total, warm = cfg.epochs * spe, cfg.warmup_epochs * spe
    end = lr_at(total, total, warm, cfg.base_lr, cfg.min_lr)
    mid = lr_at((total + warm) // 2, total, warm, cfg.base_lr, cfg.min_lr)
    want = (cfg.base_lr + cfg.min_lr) / 2
    ok = end == pytest.approx(cfg.min_lr, abs=1e-15) and abs(mid - want) <= 1e-9
    verdict(9, ok, f"lr(end)={end:.3g} (min_lr {cfg.min_lr}); lr(mid)={mid:.9g} vs {want:.9g}")


@pytest.mark.slow
def test_c10_ablation(verdict, toy_dataset):
    t0 = time.perf_counter()
    cfg = _train_cfg()
    rows = run_ablation(cfg, list(ggle.MODES), [0], toy_dataset)
    csv_a = ablation_csv(rows)
    csv_b = ablation_csv(run_ablation(cfg, list(ggle.MODES), [0], toy_dataset))
    dt = time.perf_counter() - t0
    done = [r.mode for r in rows if r.final_loss is not None]
    ok = done == list(ggle.MODES) and csv_a == csv_b and dt < 1800
    losses = " ".join(f"{r.mode}={r.final_loss:.3f}" for r in rows if r.final_loss is not None)
    verdict(10, ok, f"{len(done)}/6 modes completed, CSV deterministic={csv_a == csv_b}; {losses} ({dt:.0f}s)")
