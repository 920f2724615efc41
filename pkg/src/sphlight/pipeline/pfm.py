"""Portable Float Map (colour ``PF`` variant) reader and writer.

Layout: ``PF\\n<width> <height>\\n<scale>\\n`` followed by packed float32 RGB
triples, bottom row first. A negative scale marks little-endian data.
"""
from __future__ import annotations

import os

import numpy as np

from ..envmap import EquirectMap


class PFMError(ValueError):
    """Malformed, unsupported or physically invalid PFM content."""


def _read_header(buf: bytes):
    lines = []
    pos = 0
    while len(lines) < 3:
        end = buf.find(b"\n", pos)
        if end < 0 or end - pos > 256:
            raise PFMError("truncated or malformed PFM header")
        line = buf[pos:end].strip()
        pos = end + 1
        if line:
            lines.append(line)
    return lines, pos


def decode_pfm(buf: bytes) -> np.ndarray:
    """Raw float32 pixels, shape (H, W, 3), top row first."""
    (magic, dims, scale), offset = _read_header(buf)
    if magic == b"Pf":
        raise PFMError("greyscale PFM ('Pf') is not supported; expected colour 'PF'")
    if magic != b"PF":
        raise PFMError(f"not a PFM file (magic {magic[:8]!r})")
    try:
        width, height = (int(t) for t in dims.split())
        scale = float(scale)
    except ValueError as exc:
        raise PFMError(f"bad PFM dimensions/scale line: {exc}") from None
    if width <= 0 or height <= 0 or scale == 0.0:
        raise PFMError(f"invalid PFM header values {width}x{height}, scale {scale}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * 3
    payload = buf[offset:]
    if len(payload) != count * 4:
        raise PFMError(f"expected {count * 4} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width, 3)
    return np.flipud(data).astype(np.float32)


def read_pfm(path) -> EquirectMap:
    with open(path, "rb") as fh:
        data = decode_pfm(fh.read())
    if np.any(np.isnan(data)) or np.any(np.isinf(data)):
        raise PFMError(f"{os.fspath(path)}: payload contains NaN or Inf")
    if np.any(data < 0):
        raise PFMError(f"{os.fspath(path)}: negative radiance in {int((data < 0).sum())} samples")
    if data.shape[0] < 2 or data.shape[1] < 4:
        raise PFMError(f"{os.fspath(path)}: panorama {data.shape[0]}x{data.shape[1]} too small")
    return EquirectMap(data)


def encode_pfm(data) -> bytes:
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[2] != 3:
        raise PFMError(f"expected (H, W, 3) pixels, got {data.shape}")
    H, W = data.shape[:2]
    header = f"PF\n{W} {H}\n-1.0\n".encode("ascii")
    return header + np.flipud(data).astype("<f4").tobytes()


def write_pfm(m, path):
    """Write an :class:`EquirectMap` (or raw nonnegative array) as little-endian PFM."""
    data = m.data if isinstance(m, EquirectMap) else np.asarray(m)
    if np.any(data < 0):
        raise PFMError("refusing to write negative radiance")
    with open(path, "wb") as fh:
        fh.write(encode_pfm(data))
