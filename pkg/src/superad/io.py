"""Cube, mask, and score-map data types, their on-disk formats, and a
deterministic synthetic scene generator.

File formats
------------
``.hsi`` cube: 4 ASCII magic bytes ``HSI1``; three little-endian uint32
``h, w, c``; then ``h*w*c`` little-endian float32 values, band-sequential
(all of band 0 row-major, then band 1, ...). Values are stored in 32-bit
but all in-memory computation is float64.

Mask: binary PGM (P5); 0 is background, any nonzero value is anomaly.

Score map CSV: ``h`` lines of ``w`` comma-separated decimal scores at full
round-trip precision. Score map PGM: P5 with scores min-max scaled to
0..255 (floor), a constant map writes all zeros.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "HsiCube",
    "GroundTruth",
    "AnomalyMap",
    "SceneSpec",
    "HsiFormatError",
    "PgmFormatError",
    "SceneContrastError",
    "load_cube",
    "save_cube",
    "load_mask",
    "save_mask",
    "save_map_csv",
    "load_map_csv",
    "save_map_pgm",
    "normalize_bands",
    "synth_scene",
]

_HSI_MAGIC = b"HSI1"
_HSI_HEADER = struct.Struct("<III")

# Additive Gaussian noise applied to every synthetic scene, in reflectance
# units. Fixed rather than configurable: the scene knobs that matter for
# detection difficulty are contrast and smoothness.
NOISE_SIGMA = 0.01

_CONTRAST_ATTEMPTS = 1000


class HsiFormatError(ValueError):
    """Raised when a .hsi file cannot be parsed; names the byte offset."""


class PgmFormatError(ValueError):
    """Raised when a PGM mask file cannot be parsed."""


class SceneContrastError(RuntimeError):
    """Raised when no anomaly spectrum satisfies the contrast knob."""


@dataclass
class HsiCube:
    """Dense hyperspectral image, ``data`` laid out as (height, width, bands)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"cube data must be 3-D (h, w, c), got shape {self.data.shape}")
        h, w, c = self.data.shape
        if h < 1 or w < 1 or c < 1:
            raise ValueError(f"cube dimensions must be positive, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("cube data contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass
class GroundTruth:
    """Per-pixel binary anomaly labels; evaluation-only, never seen by training."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)
        if self.mask.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.mask.shape}")

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


@dataclass
class AnomalyMap:
    """Per-pixel non-negative anomaly scores."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError(f"scores must be 2-D, got shape {self.scores.shape}")
        if not np.isfinite(self.scores).all():
            raise ValueError("anomaly scores contain non-finite values")
        if (self.scores < 0).any():
            raise ValueError("anomaly scores must be non-negative")

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


@dataclass
class SceneSpec:
    """Parameters of a synthetic scene; identical specs give bit-identical scenes.

    ``anomaly_contrast`` is the minimum spectral angle (radians) required
    between the implanted anomaly spectrum and every background endmember.
    ``smoothness`` is the Gaussian radius (pixels) applied to the abundance
    fields before mixing.
    """

    h: int
    w: int
    c: int
    endmember_count: int = 4
    anomaly_rate: float = 0.005
    anomaly_contrast: float = 0.12
    smoothness: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.h < 1 or self.w < 1 or self.c < 1:
            raise ValueError("scene dimensions must be positive")
        if self.endmember_count < 1:
            raise ValueError("endmember_count must be positive")
        if not (0.0 < self.anomaly_rate <= 0.05):
            raise ValueError("anomaly_rate must lie in (0, 0.05]")
        if self.anomaly_count < 1:
            raise ValueError("anomaly_rate * h * w must round to at least one pixel")
        if self.anomaly_contrast < 0:
            raise ValueError("anomaly_contrast must be non-negative")
        if self.smoothness < 0:
            raise ValueError("smoothness must be non-negative")

    @property
    def anomaly_count(self) -> int:
        return int(math.floor(self.anomaly_rate * self.h * self.w + 0.5))


def load_cube(path) -> HsiCube:
    """Read a .hsi file; distinct parse errors name the failing byte offset."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != _HSI_MAGIC:
        got = blob[:4].decode("latin1") if len(blob) >= 4 else repr(blob)
        raise HsiFormatError(f"{path}: bad magic {got!r} at byte offset 0, expected 'HSI1'")
    if len(blob) < 16:
        raise HsiFormatError(f"{path}: truncated header at byte offset {len(blob)}, need 16 bytes")
    h, w, c = _HSI_HEADER.unpack_from(blob, 4)
    if h < 1 or w < 1 or c < 1:
        raise HsiFormatError(f"{path}: zero dimension in header at byte offset 4: {h}x{w}x{c}")
    need = h * w * c * 4
    payload = blob[16:]
    if len(payload) < need:
        raise HsiFormatError(
            f"{path}: truncated payload at byte offset {16 + len(payload)}, "
            f"expected {need} payload bytes, got {len(payload)}"
        )
    values = np.frombuffer(payload[:need], dtype="<f4").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise HsiFormatError(f"{path}: non-finite value at byte offset {16 + 4 * int(bad[0])}")
    data = values.reshape(c, h, w).transpose(1, 2, 0)
    return HsiCube(data)


def save_cube(cube: HsiCube, path) -> None:
    """Write a cube as .hsi (band-sequential little-endian float32)."""
    h, w, c = cube.data.shape
    payload = cube.data.transpose(2, 0, 1).astype("<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(_HSI_MAGIC)
            f.write(_HSI_HEADER.pack(h, w, c))
            f.write(payload)
    except OSError as e:
        raise OSError(f"failed to write cube to {path}: {e}") from e


def _parse_pgm(blob: bytes, path) -> np.ndarray:
    if blob[:2] != b"P5":
        raise PgmFormatError(f"{path}: not a binary PGM (P5) file")
    # Header: P5, width, height, maxval as whitespace-separated tokens,
    # '#' comments allowed, then one whitespace byte before the raster.
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmFormatError(f"{path}: truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PgmFormatError(f"{path}: non-numeric PGM header fields {tokens}") from None
    if maxval <= 0 or maxval > 255:
        raise PgmFormatError(f"{path}: unsupported PGM maxval {maxval}")
    raster = blob[pos : pos + h * w]
    if len(raster) < h * w:
        raise PgmFormatError(f"{path}: truncated PGM raster, expected {h * w} bytes, got {len(raster)}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


def load_mask(path) -> GroundTruth:
    """Read a PGM mask; any nonzero pixel counts as anomaly."""
    with open(path, "rb") as f:
        blob = f.read()
    return GroundTruth(_parse_pgm(blob, path) != 0)


def save_mask(gt: GroundTruth, path) -> None:
    """Write a mask as binary PGM, anomalies at 255."""
    _write_pgm((gt.mask.astype(np.uint8) * 255), path)


def _write_pgm(gray: np.ndarray, path) -> None:
    h, w = gray.shape
    try:
        with open(path, "wb") as f:
            f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            f.write(gray.astype(np.uint8).tobytes())
    except OSError as e:
        raise OSError(f"failed to write PGM to {path}: {e}") from e


def save_map_csv(amap: AnomalyMap, path) -> None:
    """Write scores as CSV, one image row per line, full float precision."""
    try:
        with open(path, "w", encoding="ascii") as f:
            for row in amap.scores:
                f.write(",".join(repr(float(v)) for v in row))
                f.write("\n")
    except OSError as e:
        raise OSError(f"failed to write map CSV to {path}: {e}") from e


def load_map_csv(path) -> AnomalyMap:
    """Read a score map CSV written by :func:`save_map_csv`."""
    rows = []
    with open(path, "r", encoding="ascii") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(v) for v in line.split(",")])
            except ValueError:
                raise ValueError(f"{path}: non-numeric score on line {line_no}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: empty or ragged score grid")
    return AnomalyMap(np.array(rows))


def save_map_pgm(amap: AnomalyMap, path) -> None:
    """Write scores as P5 PGM, min-max scaled to 0..255 with floor."""
    s = amap.scores
    span = s.max() - s.min()
    if span == 0:
        gray = np.zeros(s.shape, dtype=np.uint8)
    else:
        gray = np.floor(255.0 * (s - s.min()) / span).astype(np.uint8)
    _write_pgm(gray, path)


def normalize_bands(cube: HsiCube) -> HsiCube:
    """Min-max map each band independently onto [0, 1]; constant bands to 0."""
    data = cube.data
    lo = data.min(axis=(0, 1), keepdims=True)
    hi = data.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    out = np.where(span == 0, 0.0, (data - lo) / np.where(span == 0, 1.0, span))
    return HsiCube(out)


def _spectral_angle(a: np.ndarray, b: np.ndarray) -> float:
    cosv = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return float(np.arccos(np.clip(cosv, -1.0, 1.0)))


def _anomaly_spectrum(rng: np.random.Generator, endmembers: np.ndarray, contrast: float) -> np.ndarray:
    """Blend a background mixture toward a random direction just far enough
    that the spectral angle to every endmember exceeds ``contrast``.

    Keeping the anomaly barely past the threshold makes the contrast knob an
    actual difficulty dial instead of a loose lower bound.
    """
    k, c = endmembers.shape
    for _ in range(_CONTRAST_ATTEMPTS):
        weights = rng.random(k)
        base = (weights / weights.sum()) @ endmembers
        direction = rng.uniform(0.0, 1.0, size=c)
        for lam in np.linspace(0.0, 1.0, 201):
            candidate = (1.0 - lam) * base + lam * direction
            if all(_spectral_angle(candidate, e) > contrast for e in endmembers):
                return candidate
    raise SceneContrastError(
        f"no anomaly spectrum with spectral angle > {contrast} rad to all "
        f"{k} endmembers after {_CONTRAST_ATTEMPTS} attempts; lower the contrast knob"
    )


def synth_scene(spec: SceneSpec) -> tuple[HsiCube, GroundTruth]:
    """Generate a background of mixed endmember spectra plus point anomalies.

    The background mixes ``endmember_count`` random smooth spectra through
    spatially low-passed abundance fields, so superpixels have coherent
    regions to latch onto. Exactly ``round(anomaly_rate * h * w)`` pixels
    are replaced by a single anomaly spectrum whose spectral angle to every
    endmember exceeds ``anomaly_contrast``; Gaussian noise is added last.
    Fully determined by ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    h, w, c, k = spec.h, spec.w, spec.c, spec.endmember_count

    endmembers = rng.uniform(0.2, 1.0, size=(k, c))
    if c >= 3:
        endmembers = ndimage.uniform_filter1d(endmembers, size=min(5, c), axis=1, mode="nearest")

    fields = rng.standard_normal((k, h, w))
    if spec.smoothness > 0:
        fields = np.stack(
            [ndimage.gaussian_filter(f, sigma=spec.smoothness, mode="reflect") for f in fields]
        )
    # Per-field standardisation keeps the softmax sharpness independent of
    # the smoothing radius.
    std = fields.std(axis=(1, 2), keepdims=True)
    fields = (fields - fields.mean(axis=(1, 2), keepdims=True)) / np.where(std == 0, 1.0, std)
    logits = 3.0 * fields
    logits -= logits.max(axis=0, keepdims=True)
    abundances = np.exp(logits)
    abundances /= abundances.sum(axis=0, keepdims=True)

    scene = np.einsum("khw,kc->hwc", abundances, endmembers)

    positions = rng.choice(h * w, size=spec.anomaly_count, replace=False)
    anomaly = _anomaly_spectrum(rng, endmembers, spec.anomaly_contrast)

    flat = scene.reshape(h * w, c)
    flat[positions] = anomaly
    scene = flat.reshape(h, w, c)
    scene = scene + rng.normal(0.0, NOISE_SIGMA, size=(h, w, c))

    mask = np.zeros(h * w, dtype=bool)
    mask[positions] = True
    return HsiCube(scene), GroundTruth(mask.reshape(h, w))
