"""TARC1 tensor archive.

Layout::

    b"TARC1" | u32 little-endian manifest length | UTF-8 JSON manifest | payload

The manifest is a list of ``{"name", "shape", "dtype", "offset"}`` records;
offsets are relative to the start of the payload. Tensors are stored
row-major, little-endian. Model weights are always ``f32``; ``i64`` is
accepted for integer bookkeeping fields in serialised tracker state.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict

import numpy as np

from .errors import ArchiveError

MAGIC = b"TARC1"
DTYPES = {"f32": np.dtype("<f4"), "i64": np.dtype("<i8")}
_CODES = {v: k for k, v in DTYPES.items()}


def dump_bytes(tensors: Dict[str, np.ndarray]) -> bytes:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise ArchiveError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype=dt).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": _CODES[dt], "offset": offset})
        chunks.append(data)
        offset += len(data)
    head = json.dumps(manifest, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(chunks)


def load_bytes(blob: bytes) -> Dict[str, np.ndarray]:
    if blob[:len(MAGIC)] != MAGIC:
        raise ArchiveError("bad magic: not a TARC1 archive")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise ArchiveError("truncated header")
    (mlen,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + mlen:
        raise ArchiveError("truncated manifest")
    try:
        manifest = json.loads(blob[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"corrupt manifest: {exc}") from None
    payload = memoryview(blob)[pos + mlen:]
    out: Dict[str, np.ndarray] = {}
    spans = []
    for rec in manifest:
        try:
            name, shape, code, offset = rec["name"], tuple(rec["shape"]), rec["dtype"], int(rec["offset"])
        except (KeyError, TypeError) as exc:
            raise ArchiveError(f"malformed manifest record {rec!r}") from exc
        if code not in DTYPES:
            raise ArchiveError(f"tensor {name!r}: unknown dtype {code!r}")
        if name in out:
            raise ArchiveError(f"duplicate tensor name {name!r}")
        if any((not isinstance(d, int)) or d < 0 for d in shape):
            raise ArchiveError(f"tensor {name!r}: invalid shape {list(shape)}")
        dt = DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if offset < 0 or offset + size > len(payload):
            raise ArchiveError(
                f"tensor {name!r}: bytes [{offset}, {offset + size}) outside payload of {len(payload)} bytes")
        spans.append((offset, offset + size, name))
        out[name] = np.frombuffer(payload[offset:offset + size], dtype=dt).reshape(shape).copy()
    spans.sort()
    for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ArchiveError(f"tensors {an!r} and {bn!r} overlap")
    return out


def save_archive(tensors: Dict[str, np.ndarray], path) -> None:
    Path(path).write_bytes(dump_bytes(tensors))


def load_archive(path) -> Dict[str, np.ndarray]:
    return load_bytes(Path(path).read_bytes())


def save_params(params, path) -> None:
    from .model import flatten_params
    save_archive(flatten_params(params), path)


def load_params(path, config):
    """Load model weights for ``config``; fails on missing or unknown names."""
    from .model import unflatten_params
    return unflatten_params(config, load_archive(path))
