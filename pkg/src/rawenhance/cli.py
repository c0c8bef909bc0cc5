"""Command-line entry point.

Exit codes: 0 success, 2 unreadable/invalid input (and bad flags),
3 configuration or checkpoint mismatch, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, bayer, gradcheck, rten
from .bayer import BayerParseError, SensorModel
from .checkpoint import CheckpointError, load_checkpoint
from .ggle import MODES
from .model import enhance
from .surrogate import load_dataset, make_dataset, make_scene, save_dataset
from .trainer import ConfigError, TrainConfig, TrainingDiverged, train

EXIT_PARSE, EXIT_CONFIG, EXIT_NUMERIC = 2, 3, 4


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}", EXIT_PARSE) from None
    except json.JSONDecodeError as e:
        raise CliError(f"{path} is not valid JSON: {e}", EXIT_PARSE) from None


def _sidecar(pgm_path):
    return os.path.splitext(pgm_path)[0] + ".json"


def _load_packed(path):
    """Packed planes from a .rten container or a .pgm with its .json sidecar."""
    if path.endswith(".rten"):
        return rten.load(path)
    return bayer.pack(bayer.load_bayer(path, _sidecar(path)))


# ---------------------------------------------------------------------------
# subcommands

def cmd_pack(args):
    frame = bayer.load_bayer(args.pgm, args.meta)
    rten.save(args.out, bayer.pack(frame))


def cmd_unpack(args):
    packed = rten.load(args.packed)
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise CliError(f"expected a (4, H, W) tensor, got {packed.shape}", EXIT_PARSE)
    bayer.save_bayer(bayer.unpack(packed, args.black, args.white), args.pgm, args.meta)


def cmd_enhance(args):
    packed = rten.load(args.packed)
    if packed.ndim != 3 or packed.shape[0] != 4:
        raise CliError(f"expected a (4, H, W) tensor, got {packed.shape}", EXIT_PARSE)
    model = load_checkpoint(args.checkpoint, args.mode)
    out = enhance(model, packed[None], train=False)[0]
    rten.save(args.out, out)


def _train_inputs(cfg_path, seed):
    raw = _read_json(cfg_path)
    data_spec = raw.pop("dataset", {})
    try:
        cfg = TrainConfig.from_dict(raw)
    except ConfigError as e:
        raise CliError(str(e), EXIT_CONFIG) from None
    if seed is not None:
        cfg.seed = seed
    if isinstance(data_spec, str):
        base = os.path.dirname(os.path.abspath(cfg_path))
        dataset = load_dataset(os.path.join(base, data_spec))
    else:
        try:
            sensor = SensorModel.from_dict(data_spec.get("sensor", {}))
            dataset = make_dataset(int(data_spec.get("n", 200)), sensor, int(data_spec.get("seed", 0)))
        except (TypeError, ValueError) as e:
            raise CliError(f"bad dataset spec: {e}", EXIT_CONFIG) from None
    return cfg, dataset


def cmd_train(args):
    cfg, dataset = _train_inputs(args.config, args.seed)
    report = train(cfg, dataset, log=print)
    report.save(args.out_dir)
    print(f"initial_loss={report.initial_loss:.6f} final_loss={report.final_loss:.6f}")


def cmd_snr(args):
    planes = [_load_packed(p) for p in args.inputs]
    if any(p.ndim != 3 or p.shape[0] != 4 for p in planes):
        raise CliError("snr inputs must be packed (4, H, W) frames", EXIT_PARSE)
    pooled = np.concatenate([p.reshape(4, -1) for p in planes], axis=1)[:, None, :]
    with open(args.out, "w") as f:
        f.write(analysis.snr_csv(analysis.channel_snr(pooled)))


def cmd_hist(args):
    img = _load_packed(args.input)
    if img.ndim != 3 or img.shape[0] not in (3, 4):
        raise CliError(f"expected 3 or 4 planes, got shape {img.shape}", EXIT_PARSE)
    names = bayer.PLANES if img.shape[0] == 4 else analysis.COLORS
    rng = tuple(args.range) if args.range else ((0.0, 1.0) if img.shape[0] == 4 else (0.0, 255.0))
    try:
        hists = [analysis.histogram(img[i], args.bins, rng, names[i]) for i in range(img.shape[0])]
    except ValueError as e:
        raise CliError(str(e), EXIT_CONFIG) from None
    with open(args.out, "w") as f:
        f.write(analysis.histogram_csv(hists))


def cmd_gradcheck(args):
    err, worst = gradcheck.grad_check(args.pipeline, args.seed, args.h, method=args.method,
                                      return_worst=True)
    print(f"pipeline={args.pipeline} seed={args.seed} max_rel_error={err:.3e} worst={worst}")
    if err > gradcheck.TOLERANCE:
        raise CliError(f"gradient check failed: {err:.3e} > {gradcheck.TOLERANCE:g}", EXIT_NUMERIC)


def cmd_ablate(args):
    cfg, dataset = _train_inputs(args.config, None)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise CliError(f"unknown guidance modes {bad}", EXIT_CONFIG)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise CliError(f"bad --seeds {args.seeds!r}", EXIT_CONFIG) from None
    rows = analysis.run_ablation(cfg, modes, seeds, dataset, log=print)
    with open(args.out, "w") as f:
        f.write(analysis.ablation_csv(rows))


def cmd_synth(args):
    try:
        model = SensorModel.from_dict(_read_json(args.model))
    except (TypeError, ValueError) as e:
        raise CliError(f"bad sensor model: {e}", EXIT_CONFIG) from None
    if args.seed is not None:
        model.seed = args.seed
    scene = _read_json(args.scene)
    kind = scene.get("kind", "flat")
    if kind == "toy":
        samples = make_dataset(int(scene.get("n", 200)), model, model.seed, int(scene.get("size", 32)))
        print(save_dataset(samples, args.out_dir))
        return
    if kind not in ("flat", "squares"):
        raise CliError(f"unknown scene kind {kind!r}", EXIT_CONFIG)
    try:
        h, w = int(scene.get("height", 32)), int(scene.get("width", 32))
        radiance = np.empty((h, w, 3))
        radiance[...] = np.asarray(scene.get("background", scene.get("radiance", [0.5] * 3)), dtype=float)
        for sq in scene.get("squares", []):
            x, y, s = int(sq["x"]), int(sq["y"]), int(sq["size"])
            radiance[y:y + s, x:x + s] = np.asarray(sq["radiance"], dtype=float)
        frames = int(scene.get("frames", 1))
    except (KeyError, TypeError, ValueError) as e:
        raise CliError(f"bad scene spec: {e}", EXIT_CONFIG) from None
    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(model.seed)
    for i in range(frames):
        frame = bayer.synthesize_raw(radiance, model, rng)
        stem = os.path.join(args.out_dir, f"frame_{i:04d}")
        bayer.save_bayer(frame, stem + ".pgm", stem + ".json")


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="rawenhance", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="compute threads (only 1 is supported)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("pack", help="pack an RGGB PGM into a (4, H, W) RTEN tensor")
    s.add_argument("pgm")
    s.add_argument("meta", help="JSON sidecar with pattern and black/white levels")
    s.add_argument("out")
    s.set_defaults(func=cmd_pack)

    s = sub.add_parser("unpack", help="turn a packed RTEN tensor back into PGM + sidecar")
    s.add_argument("packed")
    s.add_argument("pgm")
    s.add_argument("meta")
    s.add_argument("--black", type=int, default=0)
    s.add_argument("--white", type=int, default=65535)
    s.set_defaults(func=cmd_unpack)

    s = sub.add_parser("enhance", help="run the gamma stage and guided enhancer (eval mode)")
    s.add_argument("packed")
    s.add_argument("checkpoint")
    s.add_argument("out")
    s.add_argument("--mode", choices=MODES, default=None, help="expected guidance mode")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("train", help="train on the toy task")
    s.add_argument("config")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("snr", help="per-channel SNR of packed frames as CSV")
    s.add_argument("inputs", nargs="+", help=".pgm (with .json sidecar) or .rten files")
    s.add_argument("out")
    s.set_defaults(func=cmd_snr)

    s = sub.add_parser("hist", help="per-plane histograms as CSV")
    s.add_argument("input")
    s.add_argument("out")
    s.add_argument("--bins", type=int, default=256)
    s.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    s.set_defaults(func=cmd_hist)

    s = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    s.add_argument("--pipeline", choices=gradcheck.PIPELINES, default="full")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h", type=float, default=gradcheck.DEFAULT_H)
    s.add_argument("--method", choices=gradcheck.METHODS, default="adaptive")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablate", help="train one run per guidance mode and seed")
    s.add_argument("config")
    s.add_argument("out")
    s.add_argument("--modes", default=",".join(MODES))
    s.add_argument("--seeds", default="0")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("synth", help="simulate sensor frames from a scene spec")
    s.add_argument("model", help="SensorModel JSON")
    s.add_argument("scene", help="scene JSON (kind: flat | squares | toy)")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.threads != 1:
            raise CliError("only --threads 1 is supported", EXIT_CONFIG)
        args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (BayerParseError, rten.RtenError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
