"""Grayscale image helpers shared by every other module.

Images are ``(N, N)`` float64 arrays with values in ``[0, 1]``. Vectorized
images are row-major, so pixel ``(i, j)`` sits at index ``i * N + j``.
"""
from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "DimensionError",
    "PGMFormatError",
    "as_image",
    "vectorize",
    "devectorize",
    "frobenius_distance",
    "grand_sum",
    "read_pgm",
    "write_pgm",
]


class DimensionError(ValueError):
    """Raised when array shapes do not describe a valid square image."""


class PGMFormatError(ValueError):
    """Raised on malformed PGM input."""


def as_image(img, check_range=True) -> np.ndarray:
    """Return ``img`` as a float64 square image, validating shape and range."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
        raise DimensionError(f"expected an N x N image with N >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if check_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return arr


def vectorize(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"expected a square image, got shape {arr.shape}")
    return arr.reshape(-1).copy()


def devectorize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    n = math.isqrt(v.size)
    if n * n != v.size:
        raise DimensionError(f"vector length {v.size} is not a perfect square")
    return v.reshape(n, n).copy()


def frobenius_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"resolution mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def grand_sum(img) -> float:
    """Sum of all entries; equals the entrywise 1-norm for valid images."""
    return float(np.sum(img))


def write_pgm(path: str | os.PathLike, img) -> None:
    """Write a binary (P5) PGM with maxval 255.

    Values outside ``[0, 1]`` are clipped before quantization.
    """
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-d image, got shape {arr.shape}")
    h, w = arr.shape
    data = np.rint(arr * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(buf: bytes, count: int):
    # header tokens are whitespace separated; '#' starts a comment to end of line
    tokens = []
    pos = 0
    while len(tokens) < count:
        if pos >= len(buf):
            raise PGMFormatError("truncated PGM header")
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Read a binary (P5) PGM into a float image with values ``byte / maxval``."""
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, offset = _pgm_tokens(buf, 4)
    if tokens[0] != b"P5":
        raise PGMFormatError(f"unsupported PGM magic {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMFormatError("non-integer PGM header field") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise PGMFormatError(f"unsupported PGM geometry {w}x{h} maxval={maxval}")
    raster = buf[offset:offset + w * h]
    if len(raster) != w * h:
        raise PGMFormatError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).astype(np.float64) / float(maxval)
