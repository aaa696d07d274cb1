"""Binary netpbm codecs: P5 (grayscale masks) and P6 (RGB images), maxval 255.

Decoded arrays are float64 in [0, 1]: masks as ``(H, W)``, images as
``(3, H, W)``.  Encoding rounds ``x * 255`` to the nearest integer.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from ..errors import FormatError

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _parse_header(buf: bytes):
    pos, fields = 0, []
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if not m:
            raise FormatError("truncated netpbm header")
        fields.append(m.group(1))
        pos = m.end()
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("netpbm header must end with one whitespace byte")
    magic = fields[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm magic {magic!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError("non-integer netpbm header field") from None
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    if w < 1 or h < 1:
        raise FormatError("netpbm extents must be positive")
    return magic, w, h, pos + 1


def decode(buf: bytes) -> np.ndarray:
    magic, w, h, start = _parse_header(buf)
    ch = 3 if magic == b"P6" else 1
    n = w * h * ch
    payload = buf[start:start + n]
    if len(payload) < n:
        raise FormatError(f"truncated netpbm payload: {len(payload)} of {n} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    if ch == 1:
        return arr.reshape(h, w)
    return arr.reshape(h, w, 3).transpose(2, 0, 1).copy()


def encode(arr) -> bytes:
    a = np.asarray(getattr(arr, "data", arr), dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    q = np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    if q.ndim == 2:
        h, w = q.shape
        return f"P5\n{w} {h}\n255\n".encode() + q.tobytes()
    if q.ndim == 3 and q.shape[0] == 3:
        _, h, w = q.shape
        return f"P6\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes()
    raise FormatError(f"cannot encode array of shape {a.shape} as netpbm")


def read_raster(path) -> np.ndarray:
    try:
        return decode(Path(path).read_bytes())
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def write_raster(path, arr):
    Path(path).write_bytes(encode(arr))


def raster_size(path) -> tuple:
    """``(H, W)`` from the header only."""
    with open(path, "rb") as fh:
        head = fh.read(256)
    _, w, h, _ = _parse_header(head)
    return h, w
