"""Per-channel statistics on packed frames, histograms, and the guidance ablation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .trainer import TrainConfig, TrainingDiverged, train

UNDEFINED = "undefined"
COLORS = ("R", "G", "B")


@dataclass
class ChannelStat:
    channel: str
    mean: float
    std: float
    snr_db: float | None     # None when std == 0


def _pooled(packed):
    p = np.asarray(packed, dtype=np.float64)
    return {"R": p[0].ravel(), "G": np.concatenate([p[1].ravel(), p[2].ravel()]), "B": p[3].ravel()}


def channel_snr(packed):
    """Global SNR per color, 20*log10(mean/std) over the pooled samples.

    Both green planes are pooled into one population.
    """
    out = []
    for c, vals in _pooled(packed).items():
        mean, std = float(vals.mean()), float(vals.std())
        snr = 20 * math.log10(abs(mean) / std) if std > 0 and mean != 0 else None
        out.append(ChannelStat(c, mean, std, snr))
    return out


@dataclass
class Dominance:
    r: int
    g: int
    b: int
    ties: int

    @property
    def total(self):
        return self.r + self.g + self.b + self.ties

    def exact(self):
        t = self.total
        return tuple(Fraction(v, t) for v in (self.r, self.g, self.b, self.ties))

    def fractions(self):
        return tuple(float(f) for f in self.exact())


def channel_dominance(packed) -> Dominance:
    """Count pixels where R, mean(G1, G2) or B is the strict maximum."""
    p = np.asarray(packed, dtype=np.float64)
    r, g, b = p[0], (p[1] + p[2]) / 2, p[3]
    r_win = (r > g) & (r > b)
    g_win = (g > r) & (g > b)
    b_win = (b > r) & (b > g)
    n = r.size
    nr, ng, nb = int(r_win.sum()), int(g_win.sum()), int(b_win.sum())
    return Dominance(nr, ng, nb, n - nr - ng - nb)


@dataclass
class Histogram:
    channel: str
    edges: np.ndarray
    counts: np.ndarray


def histogram(values, bins=256, value_range=(0.0, 1.0), channel=""):
    """Uniform histogram; values are clipped into the range, top edge lands in the last bin."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = value_range
    if not hi > lo:
        raise ValueError("value_range must be increasing")
    v = np.clip(np.asarray(values, dtype=np.float64).ravel(), lo, hi)
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    return Histogram(channel, edges, counts)


# ---------------------------------------------------------------------------
# CSV

def _fmt(x):
    return repr(float(x))


def snr_csv(stats) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "mean", "std", "snr_db"])
    for s in stats:
        w.writerow([s.channel, _fmt(s.mean), _fmt(s.std), UNDEFINED if s.snr_db is None else _fmt(s.snr_db)])
    return buf.getvalue()


def histogram_csv(hists) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "bin_start", "bin_end", "count"])
    for h in hists:
        for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
            w.writerow([h.channel, _fmt(lo), _fmt(hi), int(c)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# ablation

@dataclass
class AblationRow:
    mode: str
    seed: int
    final_loss: float | None   # None when the run diverged


def run_ablation(base_cfg: TrainConfig, modes, seeds, dataset, log=None):
    """One training run per (mode, seed), everything else held fixed."""
    if not modes or not seeds:
        raise ValueError("modes and seeds must be non-empty")
    rows = []
    for mode in modes:
        for seed in seeds:
            cfg = replace(base_cfg, guidance_mode=mode, seed=int(seed))
            try:
                final = train(cfg, dataset).final_loss
            except TrainingDiverged:
                final = None
            rows.append(AblationRow(mode, int(seed), final))
            if log is not None:
                log(f"mode={mode} seed={seed} final_loss={'divergent' if final is None else f'{final:.6f}'}")
    return rows


def summarize(rows):
    """(mode, mean final loss, std, divergent count) per mode, in first-seen order."""
    out = []
    for mode in dict.fromkeys(r.mode for r in rows):
        vals = [r.final_loss for r in rows if r.mode == mode and r.final_loss is not None]
        div = sum(1 for r in rows if r.mode == mode and r.final_loss is None)
        mean = float(np.mean(vals)) if vals else float("nan")
        std = float(np.std(vals)) if vals else float("nan")
        out.append((mode, mean, std, div))
    return out


def ablation_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "seed", "final_loss"])
    for r in rows:
        w.writerow([r.mode, r.seed, "divergent" if r.final_loss is None else _fmt(r.final_loss)])
    return buf.getvalue()
