"""RGGB mosaic files, packing to four planes, and a synthetic sensor.

A packed image is a float32 array shaped (4, H, W) holding the planes
(R, G1, G2, B) normalized to [0, 1].
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field

import numpy as np

PATTERNS = ("RGGB",)
PLANES = ("R", "G1", "G2", "B")


class BayerParseError(ValueError):
    pass


class UnsupportedDepthError(BayerParseError):
    pass


class OddDimensionError(BayerParseError):
    pass


class TruncatedPayloadError(BayerParseError):
    pass


class UnknownPatternError(BayerParseError):
    pass


@dataclass
class BayerFrame:
    samples: np.ndarray  # (2H, 2W) uint16
    black_level: int = 0
    white_level: int = 65535
    pattern: str = "RGGB"

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.dtype != np.uint16:
            if self.samples.min() < 0 or self.samples.max() > 65535:
                raise ValueError("samples must fit in u16")
            self.samples = self.samples.astype(np.uint16)
        if self.samples.ndim != 2:
            raise ValueError(f"mosaic must be 2-D, got shape {self.samples.shape}")
        h, w = self.samples.shape
        if h % 2 or w % 2:
            raise OddDimensionError(f"mosaic dimensions must be even, got {w}x{h}")
        if self.pattern not in PATTERNS:
            raise UnknownPatternError(f"unsupported CFA pattern {self.pattern!r}")
        if not 0 <= self.black_level < self.white_level <= 65535:
            raise ValueError(f"need 0 <= black < white <= 65535, got {self.black_level}, {self.white_level}")

    @property
    def height(self):
        return self.samples.shape[0]

    @property
    def width(self):
        return self.samples.shape[1]

    def meta(self):
        return {"pattern": self.pattern, "black_level": int(self.black_level),
                "white_level": int(self.white_level)}


# ---------------------------------------------------------------------------
# file I/O

_PGM_HEADER = re.compile(rb"P5(?:\s+|#[^\n]*\n)*?(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def parse_pgm(data: bytes) -> np.ndarray:
    """Parse a binary 16-bit PGM into a uint16 array."""
    if not data.startswith(b"P5"):
        raise BayerParseError("not a binary PGM (missing P5 magic)")
    m = _PGM_HEADER.match(data)
    if m is None:
        raise BayerParseError("malformed PGM header")
    width, height, maxval = (int(g) for g in m.groups())
    if maxval != 65535:
        raise UnsupportedDepthError(f"maxval {maxval} unsupported, need 65535")
    if width % 2 or height % 2:
        raise OddDimensionError(f"mosaic dimensions must be even, got {width}x{height}")
    payload = data[m.end():]
    need = width * height * 2
    if len(payload) < need:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {need}")
    return np.frombuffer(payload[:need], dtype=">u2").reshape(height, width).astype(np.uint16)


def format_pgm(samples: np.ndarray) -> bytes:
    h, w = samples.shape
    return b"P5\n%d %d\n65535\n" % (w, h) + np.asarray(samples, dtype=">u2").tobytes()


def parse_meta(meta: dict):
    pattern = meta.get("pattern", "RGGB")
    if pattern not in PATTERNS:
        raise UnknownPatternError(f"unsupported CFA pattern {pattern!r}")
    try:
        return pattern, int(meta["black_level"]), int(meta["white_level"])
    except (KeyError, TypeError, ValueError) as e:
        raise BayerParseError(f"bad sidecar metadata: {e}") from None


def load_bayer(pgm_path, meta_path) -> BayerFrame:
    with open(pgm_path, "rb") as f:
        samples = parse_pgm(f.read())
    with open(meta_path) as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            raise BayerParseError(f"sidecar is not valid JSON: {e}") from None
    pattern, black, white = parse_meta(meta)
    try:
        return BayerFrame(samples, black, white, pattern)
    except BayerParseError:
        raise
    except ValueError as e:
        raise BayerParseError(str(e)) from None


def save_bayer(frame: BayerFrame, pgm_path, meta_path):
    with open(pgm_path, "wb") as f:
        f.write(format_pgm(frame.samples))
    with open(meta_path, "w") as f:
        json.dump(frame.meta(), f)


# ---------------------------------------------------------------------------
# packing

def pack(frame: BayerFrame) -> np.ndarray:
    """Split each 2x2 RGGB tile into four planes and normalize to [0, 1]."""
    s = frame.samples.astype(np.float64)
    planes = np.stack([s[0::2, 0::2], s[0::2, 1::2], s[1::2, 0::2], s[1::2, 1::2]])
    scaled = (planes - frame.black_level) / (frame.white_level - frame.black_level)
    return np.clip(scaled, 0.0, 1.0).astype(np.float32)


def unpack(packed: np.ndarray, black_level=0, white_level=65535) -> BayerFrame:
    """Inverse of pack for unclamped samples (round to nearest)."""
    p = np.asarray(packed, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] != 4:
        raise ValueError(f"packed image must be (4, H, W), got {p.shape}")
    vals = np.rint(p * (white_level - black_level) + black_level)
    vals = np.clip(vals, 0, 65535).astype(np.uint16)
    _, h, w = p.shape
    mosaic = np.empty((2 * h, 2 * w), dtype=np.uint16)
    mosaic[0::2, 0::2] = vals[0]
    mosaic[0::2, 1::2] = vals[1]
    mosaic[1::2, 0::2] = vals[2]
    mosaic[1::2, 1::2] = vals[3]
    return BayerFrame(mosaic, black_level, white_level)


def reduce_green_sampling(packed: np.ndarray) -> np.ndarray:
    """Keep one green value per tile by copying G1 over G2."""
    out = np.array(packed, copy=True)
    out[2] = out[1]
    return out


# ---------------------------------------------------------------------------
# synthetic sensor

@dataclass
class SensorModel:
    quantum_efficiency: tuple = (0.25, 0.5, 0.25)
    exposure: float = 200.0
    read_noise_sigma: float = 2.0
    full_well: float = 4000.0
    black_level: int = 512
    white_level: int = 16383
    seed: int = 0
    shot_noise: bool = True

    def __post_init__(self):
        self.quantum_efficiency = tuple(float(q) for q in self.quantum_efficiency)
        if len(self.quantum_efficiency) != 3 or min(self.quantum_efficiency) <= 0:
            raise ValueError("quantum_efficiency needs three positive gains (r, g, b)")
        if self.exposure < 0:
            raise ValueError("exposure must be >= 0")
        if self.read_noise_sigma < 0 or self.full_well <= 0:
            raise ValueError("read_noise_sigma must be >= 0 and full_well > 0")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def cfa_color_index(height, width):
    """Per-site color index (0=R, 1=G, 2=B) for an RGGB mosaic."""
    idx = np.empty((height, width), dtype=np.int64)
    idx[0::2, 0::2] = 0
    idx[0::2, 1::2] = 1
    idx[1::2, 0::2] = 1
    idx[1::2, 1::2] = 2
    return idx


def synthesize_raw(scene, model: SensorModel, rng=None) -> BayerFrame:
    """Simulate a Poisson-Gaussian RGGB capture of a (2H, 2W, 3) radiance map.

    Electrons are ``qe_c * exposure * radiance_c`` at each site, followed by
    shot noise, full-well saturation, Gaussian read noise and digitization
    onto [black_level, white_level]. ``rng`` overrides ``model.seed``.
    """
    scene = np.asarray(scene, dtype=np.float64)
    if scene.ndim != 3 or scene.shape[2] != 3:
        raise ValueError(f"scene must be (2H, 2W, 3), got {scene.shape}")
    h, w, _ = scene.shape
    if h % 2 or w % 2:
        raise OddDimensionError(f"scene dimensions must be even, got {w}x{h}")
    if rng is None:
        rng = np.random.default_rng(model.seed)
    cidx = cfa_color_index(h, w)
    radiance = np.take_along_axis(scene, cidx[:, :, None], axis=2)[:, :, 0]
    qe = np.asarray(model.quantum_efficiency)[cidx]
    electrons = qe * model.exposure * np.clip(radiance, 0.0, 1.0)
    if model.shot_noise:
        electrons = rng.poisson(electrons).astype(np.float64)
    electrons = np.minimum(electrons, model.full_well)
    if model.read_noise_sigma > 0:
        electrons = electrons + rng.normal(0.0, model.read_noise_sigma, size=electrons.shape)
    gain = (model.white_level - model.black_level) / model.full_well
    dn = np.rint(model.black_level + electrons * gain)
    dn = np.clip(dn, model.black_level, model.white_level).astype(np.uint16)
    return BayerFrame(dn, model.black_level, model.white_level)
