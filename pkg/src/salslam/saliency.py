"""Saliency maps: per-feature weights, temporal filtering, loss and PGM I/O."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    MalformedHeader,
    OutOfBounds,
    TruncatedData,
    UnsupportedMaxval,
)

DEFAULT_B = 51.0
DEFAULT_GAIN_FLOOR = 0.05
BCE_EPS = 1e-7


def _round_u8(x):
    # half-up rounding then saturation to the 8-bit range
    return np.clip(np.floor(np.asarray(x, dtype=float) + 0.5), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """8-bit attention image, ``values[row, col]``; 0 is ignored, 255 maximally salient."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"saliency map must be a non-empty 2-D array, got shape {v.shape}")
        if v.dtype != np.uint8:
            if np.any((v < 0) | (v > 255)) or np.any(v != np.floor(v)):
                raise ValueError("saliency values must be integers in [0, 255]")
            v = v.astype(np.uint8)
        v = np.ascontiguousarray(v).copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[int]):
        arr = np.asarray(values)
        if arr.size != width * height:
            raise DimensionMismatch(f"expected {width * height} values, got {arr.size}")
        return cls(arr.reshape(height, width))

    @classmethod
    def constant(cls, width: int, height: int, value: int):
        return cls(np.full((height, width), value, dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, SaliencyMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None


def _bilinear(values, u, v):
    """Interpolate at column ``u`` / row ``v`` (arrays); pixel centres sit on integers.

    Written as nested lerps so that a constant neighbourhood returns the constant
    exactly.
    """
    h, w = values.shape
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    p = values.astype(float)
    top = p[y0, x0] + (p[y0, x1] - p[y0, x0]) * fx
    bot = p[y1, x0] + (p[y1, x1] - p[y1, x0]) * fx
    return top + (bot - top) * fy


def intensity_at(smap: SaliencyMap, pixels) -> np.ndarray:
    px = np.atleast_2d(np.asarray(pixels, dtype=float))
    u, v = px[:, 0], px[:, 1]
    inside = (u >= 0) & (u < smap.width) & (v >= 0) & (v < smap.height)
    if not np.all(inside):
        bad = px[~inside][0]
        raise OutOfBounds(
            f"pixel ({bad[0]:.3f}, {bad[1]:.3f}) outside {smap.width}x{smap.height} map")
    return _bilinear(smap.values, u, v)


def weights_at(smap: SaliencyMap, pixels, b: float = DEFAULT_B) -> np.ndarray:
    """Vectorised :func:`weight_at` for an (N, 2) array of pixels."""
    if b < 0:
        raise ValueError("b must be non-negative")
    return (intensity_at(smap, pixels) + b) / 255.0


def weight_at(smap: SaliencyMap, pixel, b: float = DEFAULT_B) -> float:
    """Feature weight ``(p + b) / 255`` with ``p`` bilinearly sampled at ``pixel``.

    Not clamped: ``p + b > 255`` gives a weight above one.
    """
    return float(weights_at(smap, [pixel], b)[0])


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise DimensionMismatch(f"map shapes differ: {a.shape} vs {b.shape}")


def correlation_coefficient(current: SaliencyMap, previous: SaliencyMap) -> float:
    """Frame similarity in [0, 1]; 1 means the two maps are unchanged.

    Zero-mean normalised cross-correlation mapped through ``(ncc + 1) / 2``.  When
    either map is flat the correlation is undefined and
    ``1 - mean|a - b| / 255`` is used instead.
    """
    _check_same_shape(current, previous)
    a = current.values.astype(float)
    b = previous.values.astype(float)
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.sum(da * da))
    sbb = float(np.sum(db * db))
    if saa == 0.0 or sbb == 0.0:
        return 1.0 - float(np.mean(np.abs(a - b))) / 255.0
    ncc = float(np.sum(da * db)) / np.sqrt(saa * sbb)
    return (min(1.0, max(-1.0, ncc)) + 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class EmaState:
    """Recurrent state of the adaptive EMA filter; ``state`` is None before the first frame."""

    state: np.ndarray | None = None
    gain_floor: float = DEFAULT_GAIN_FLOOR

    def __post_init__(self):
        if not 0.0 <= self.gain_floor <= 1.0:
            raise ValueError("gain_floor must lie in [0, 1]")
        if self.state is not None:
            s = np.asarray(self.state, dtype=float).copy()
            if np.any((s < 0) | (s > 255)):
                raise ValueError("EMA state values must lie in [0, 255]")
            s.flags.writeable = False
            object.__setattr__(self, "state", s)


def adaptive_ema(state: EmaState, current: SaliencyMap):
    """One step of the correlation-gated EMA.

    The gain is ``max(lambda, gain_floor)`` where ``lambda`` compares the current
    map with the rounded state, so an abrupt change of attention barely moves the
    state while a static scene tracks the input.  Returns ``(new_state, filtered)``.
    """
    if state.state is None:
        new = current.values.astype(float)
        return EmaState(new, state.gain_floor), current
    if state.state.shape != current.shape:
        raise DimensionMismatch(f"map shapes differ: {state.state.shape} vs {current.shape}")
    lam = correlation_coefficient(current, SaliencyMap(_round_u8(state.state)))
    g = max(lam, state.gain_floor)
    new = (1.0 - g) * state.state + g * current.values.astype(float)
    new = np.clip(new, 0.0, 255.0)
    return EmaState(new, state.gain_floor), SaliencyMap(_round_u8(new))


def filter_sequence(maps: Iterable[SaliencyMap], gain_floor: float = DEFAULT_GAIN_FLOOR):
    """Run :func:`adaptive_ema` over an ordered stream, yielding filtered maps."""
    st = EmaState(gain_floor=gain_floor)
    for m in maps:
        st, out = adaptive_ema(st, m)
        yield out


def bce_loss(pred, gt) -> float:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction shape {pred.shape} != target shape {gt.shape}")
    q = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(gt * np.log(q) + (1.0 - gt) * np.log(1.0 - q))))


@dataclass(frozen=True)
class SaliencyBlobSpec:
    center: tuple
    sigma: float
    peak: float = 255.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("blob sigma must be positive")
        if not 0 <= self.peak <= 255:
            raise ValueError("blob peak must lie in [0, 255]")


def synthesize_map(width: int, height: int, blobs: Sequence[SaliencyBlobSpec] = (),
                   background: float = 0.0) -> SaliencyMap:
    """Sum of isotropic Gaussian blobs over a constant background, clamped and rounded."""
    if width < 1 or height < 1:
        raise ValueError("map dimensions must be positive")
    cols = np.arange(width, dtype=float)
    rows = np.arange(height, dtype=float)
    acc = np.full((height, width), float(background))
    for blob in blobs:
        cu, cv = blob.center
        # separable exp(-d^2 / 2s^2) = exp(-du^2 / 2s^2) * exp(-dv^2 / 2s^2)
        k = -0.5 / (blob.sigma * blob.sigma)
        gu = np.exp(k * (cols - cu) ** 2)
        gv = np.exp(k * (rows - cv) ** 2)
        acc += blob.peak * np.outer(gv, gu)
    return SaliencyMap(_round_u8(acc))


# --- PGM (binary P5, maxval 255) -------------------------------------------------

_WS = b" \t\n\r\v\f"


def _header_tokens(data: bytes, path, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and (data[i] in _WS or data[i] == ord("#")):
            if data[i] == ord("#"):
                while i < n and data[i] not in b"\r\n":
                    i += 1
            else:
                i += 1
        if i >= n:
            raise MalformedHeader(f"{path}: header ends at byte {i} before all fields were read")
        start = i
        while i < n and data[i] not in _WS and data[i] != ord("#"):
            i += 1
        tokens.append((data[start:i], start))
    return tokens, i


def read_pgm(path) -> SaliencyMap:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise MalformedHeader(f"{path}: byte 0: expected magic 'P5', found {data[:2]!r}")
    tokens, end = _header_tokens(data, path, 4)
    fields = []
    for tok, off in tokens[1:]:
        if not tok.isdigit():
            raise MalformedHeader(f"{path}: byte {off}: expected a decimal integer, found {tok!r}")
        fields.append((int(tok), off))
    (width, w_off), (height, h_off), (maxval, m_off) = fields
    if width < 1 or height < 1:
        raise MalformedHeader(f"{path}: byte {w_off if width < 1 else h_off}: "
                              f"image dimensions must be positive")
    if maxval != 255:
        raise UnsupportedMaxval(f"{path}: byte {m_off}: maxval {maxval} unsupported (need 255)")
    if end >= len(data) or data[end] not in _WS:
        raise MalformedHeader(f"{path}: byte {end}: expected one whitespace byte after maxval")
    start = end + 1
    need = width * height
    if len(data) - start < need:
        raise TruncatedData(f"{path}: byte {len(data)}: pixel data truncated, "
                            f"{len(data) - start} of {need} bytes present")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=start)
    return SaliencyMap(pixels.reshape(height, width))


def write_pgm(smap: SaliencyMap, path) -> None:
    header = f"P5\n{smap.width} {smap.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + smap.values.tobytes())


def read_saliency_dir(directory):
    """Load ``<timestamp_ns>.pgm`` files sorted by timestamp -> list of (ns, map)."""
    out = []
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext.lower() != ".pgm":
            continue
        if not stem.isdigit():
            raise MalformedHeader(f"{os.path.join(directory, name)}: byte 0: "
                                  f"file name is not a nanosecond timestamp")
        out.append((int(stem), os.path.join(directory, name)))
    out.sort()
    return [(ts, read_pgm(p)) for ts, p in out]


def write_saliency_dir(directory, stamped_maps) -> None:
    os.makedirs(directory, exist_ok=True)
    for ts, smap in stamped_maps:
        write_pgm(smap, os.path.join(directory, f"{int(ts)}.pgm"))
