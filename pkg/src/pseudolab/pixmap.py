"""Grayscale probability maps, binary masks, and bit-exact file I/O.

Probability maps persist as grayscale PFM ("Pf", little-endian, scale
-1.0, rows stored bottom-up per the format convention). Masks persist as
8-bit grayscale PNG holding {0, 255}. PFM round-trips float32 payloads
bit-for-bit; PNG round-trips within 1/255 (byte b decodes to b / 255).

All types are immutable after construction and safe to share across
threads; every operation here is a pure function.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# Refuse to allocate maps beyond this pixel count when parsing files.
MAX_PIXELS = 1 << 26


class MapIOError(Exception):
    """A map file could not be read or written.

    Carries the offending path and, where meaningful, the byte offset at
    which parsing stopped.
    """

    def __init__(self, path, message: str, offset: int | None = None):
        self.path = str(path)
        self.offset = offset
        where = self.path if offset is None else f"{self.path} (byte {offset})"
        super().__init__(f"{where}: {message}")


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(values, dtype=dtype))
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ProbMap:
    """H x W map of per-pixel foreground probabilities, row-major.

    Values are float64 in memory. Construction checks shape and
    finiteness; range is the caller's contract (maps holding raw scores
    must pass through :func:`normalize` before entering [0, 1]-consuming
    code).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"probability map must be a nonempty 2-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("probability map contains non-finite values")
        object.__setattr__(self, "data", _frozen_array(arr, np.float64))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def in_unit_range(self) -> bool:
        return bool(self.data.min() >= 0.0 and self.data.max() <= 1.0)


@dataclass(frozen=True)
class BinaryMask:
    """H x W mask of {0, 1} values."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"mask must be a nonempty 2-D array, got shape {arr.shape}")
        if arr.dtype == bool:
            arr = arr.astype(np.uint8)
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "data", _frozen_array(arr, np.uint8))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def foreground(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class EntropyMap:
    """H x W map of per-pixel binary entropy, each value in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"entropy map must be a nonempty 2-D array, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("entropy map contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("entropy values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen_array(arr, np.float64))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def normalize(pmap: ProbMap, mode: str = "clamp") -> ProbMap:
    """Map values into [0, 1].

    "clamp" clips each value; "minmax" rescales by (v - min) / (max - min),
    falling back to a clamp when the spread is below 1e-12. Both modes are
    idempotent.
    """
    values = pmap.data
    if mode == "clamp":
        return ProbMap(np.clip(values, 0.0, 1.0))
    if mode == "minmax":
        lo = float(values.min())
        hi = float(values.max())
        if hi - lo < 1e-12:
            return ProbMap(np.clip(values, 0.0, 1.0))
        return ProbMap((values - lo) / (hi - lo))
    raise ValueError(f"unknown normalization mode {mode!r}")


def binarize(pmap: ProbMap, threshold: float = 0.5) -> BinaryMask:
    """Threshold a probability map; a pixel is foreground iff v > threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    return BinaryMask(pmap.data > threshold)


# ---------------------------------------------------------------------------
# PFM (portable float map), grayscale "Pf" only.

def _write_atomic(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _encode_pfm(pmap: ProbMap) -> bytes:
    header = f"Pf\n{pmap.width} {pmap.height}\n-1.0\n".encode("ascii")
    # PFM stores rows bottom-up.
    payload = np.flipud(pmap.data.astype(np.float32)).tobytes()
    return header + payload


def _read_token(buf: bytes, pos: int, path) -> tuple[bytes, int]:
    while pos < len(buf) and buf[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(buf) and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise MapIOError(path, "malformed header: unexpected end of file", offset=start)
    return buf[start:pos], pos


def _decode_pfm(buf: bytes, path) -> ProbMap:
    magic, pos = _read_token(buf, 0, path)
    if magic == b"PF":
        raise MapIOError(path, "color PFM not supported, expected grayscale 'Pf'", offset=0)
    if magic != b"Pf":
        raise MapIOError(path, f"malformed header: bad magic {magic!r}", offset=0)
    wtok, pos = _read_token(buf, pos, path)
    htok, pos = _read_token(buf, pos, path)
    stok, pos = _read_token(buf, pos, path)
    try:
        width, height = int(wtok), int(htok)
        scale = float(stok)
    except ValueError:
        raise MapIOError(path, "malformed header: non-numeric dimensions or scale", offset=pos) from None
    if width < 1 or height < 1 or width * height > MAX_PIXELS:
        raise MapIOError(path, f"dimension overflow: {width} x {height}", offset=pos)
    if scale == 0.0:
        raise MapIOError(path, "malformed header: zero scale", offset=pos)
    # Exactly one whitespace byte separates the header from the payload.
    pos += 1
    expected = width * height * 4
    payload = buf[pos : pos + expected]
    if len(payload) != expected:
        raise MapIOError(
            path,
            f"truncated payload: expected {expected} bytes, found {len(buf) - pos}",
            offset=pos + len(payload),
        )
    dtype = "<f4" if scale < 0 else ">f4"
    rows = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    if not np.isfinite(rows).all():
        raise MapIOError(path, "payload contains non-finite values", offset=pos)
    return ProbMap(np.flipud(rows))


# ---------------------------------------------------------------------------
# Public read/write entry points.

def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("pfm", "png8"):
            raise ValueError(f"unknown map format {fmt!r}")
        return fmt
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        return "pfm"
    if suffix == ".png":
        return "png8"
    raise ValueError(f"cannot infer map format from {path.name!r}; pass format explicitly")


def write_map(pmap: ProbMap, path, fmt: str | None = None) -> None:
    """Write a probability map as PFM (float32) or 8-bit grayscale PNG."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "pfm":
        _write_atomic(path, _encode_pfm(pmap))
        return
    values = np.clip(pmap.data, 0.0, 1.0)
    img = Image.fromarray(np.round(values * 255.0).astype(np.uint8), mode="L")
    tmp = path.with_name(path.name + ".tmp")
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def read_map(path, fmt: str | None = None) -> ProbMap:
    """Read a probability map; png8 decodes byte b as b / 255."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "pfm":
        try:
            buf = path.read_bytes()
        except OSError as exc:
            raise MapIOError(path, str(exc)) from exc
        return _decode_pfm(buf, path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64)
    except OSError as exc:
        raise MapIOError(path, f"bad PNG: {exc}") from exc
    return ProbMap(arr / 255.0)


def write_mask(mask: BinaryMask, path) -> None:
    """Write a binary mask as 8-bit grayscale PNG with values {0, 255}."""
    path = Path(path)
    img = Image.fromarray(mask.data * np.uint8(255), mode="L")
    tmp = path.with_name(path.name + ".tmp")
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def read_mask(path) -> BinaryMask:
    """Read a binary mask from PNG; bytes above 127 count as foreground."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
    except OSError as exc:
        raise MapIOError(path, f"bad PNG: {exc}") from exc
    return BinaryMask(arr > 127)
