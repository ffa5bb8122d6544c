"""Self-describing binary checkpoint container.

Layout::

    b"SPDF1\\n"                      magic + format version
    <u8 little-endian>              length of the JSON header in bytes
    <JSON header>                   {"kind", "meta", "tensors": [{name, shape, dtype, offset, nbytes}]}
    <raw little-endian tensor data> concatenated in header order

The header is written with sorted keys so identical inputs give identical bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

from ..exceptions import CheckpointError

MAGIC = b"SPDF1\n"
_DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8"}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def save_checkpoint(path, kind, meta, tensors):
    """Write ``tensors`` (name -> array) plus a JSON ``meta`` record to ``path``."""
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            code = "f4" if arr.dtype.itemsize == 4 else "f8"
        elif arr.dtype.kind in "iu":
            code = "i8"
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": code,
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": _jsonable(meta), "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for raw in blobs:
                fh.write(raw)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, kind=None):
    """Read a checkpoint; returns ``(meta, tensors)``.

    If ``kind`` is given the stored kind tag must match it.
    """
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if kind is not None and header.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, got {header.get('kind')!r}")
    base = pos + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: tensor {e['name']!r} truncated")
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return header["meta"], tensors
