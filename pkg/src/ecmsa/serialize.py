"""Binary tensor files and parameter checkpoints.

Tensor blob (little-endian)::

    b"TNSR" | u32 rank | u64 extent * rank | f64 payload (row-major)

Checkpoint container::

    b"ECKPT001" | u64 header_len | header JSON (utf-8) | TNSR blob * n

The header holds ``{"config": ..., "tensors": [{"key", "offset", "nbytes"}]}``
with offsets relative to the first byte after the header.  Keys keep the
order in which they were given, so identical parameters give identical bytes.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

TENSOR_MAGIC = b"TNSR"
CKPT_MAGIC = b"ECKPT001"


def tensor_to_bytes(arr) -> bytes:
    a = np.asarray(getattr(arr, "data", arr), dtype="<f8", order="C")
    head = TENSOR_MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    arr, used = _read_tensor(memoryview(buf), 0)
    if used != len(buf):
        raise FormatError("trailing bytes after tensor payload")
    return arr


def _read_tensor(buf: memoryview, pos: int):
    if bytes(buf[pos:pos + 4]) != TENSOR_MAGIC:
        raise FormatError("bad tensor magic")
    if len(buf) < pos + 8:
        raise FormatError("truncated tensor header")
    (rank,) = struct.unpack_from("<I", buf, pos + 4)
    pos += 8
    if len(buf) < pos + 8 * rank:
        raise FormatError("truncated tensor header")
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    n = int(np.prod(shape)) if rank else 1
    end = pos + 8 * n
    if len(buf) < end:
        raise FormatError("truncated tensor payload")
    arr = np.frombuffer(buf[pos:end], dtype="<f8").astype(np.float64).reshape(shape)
    return arr, end


def save_tensor(path, arr):
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def save_checkpoint(path, tensors: dict, config: dict):
    with open(path, "wb") as fh:
        save_checkpoint_to(fh, tensors, config)


def load_checkpoint(path):
    """Return ``(tensors, config)`` with tensors as an ordered dict of arrays."""
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    try:
        header = json.loads(raw[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt checkpoint header ({e})") from None
    body = memoryview(raw)[16 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        arr, end = _read_tensor(body, entry["offset"])
        if end - entry["offset"] != entry["nbytes"]:
            raise FormatError(f"{path}: size mismatch for {entry['key']}")
        tensors[entry["key"]] = arr
    return tensors, header["config"]


def checkpoint_bytes(tensors: dict, config: dict) -> bytes:
    buf = io.BytesIO()
    save_checkpoint_to(buf, tensors, config)
    return buf.getvalue()


def save_checkpoint_to(fh, tensors: dict, config: dict):
    blobs, entries, offset = [], [], 0
    for key, value in tensors.items():
        blob = tensor_to_bytes(value)
        entries.append({"key": key, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"config": config, "tensors": entries}, sort_keys=True).encode()
    fh.write(CKPT_MAGIC + struct.pack("<Q", len(header)) + header)
    for blob in blobs:
        fh.write(blob)
