"""Self-describing checkpoint files.

Layout::

    b"POPSANCK"                 magic (8 bytes)
    uint32 little-endian        format version
    uint64 little-endian        header length in bytes
    header                      UTF-8 JSON: kind, spec, arrays [{name, dtype, shape, offset, nbytes}], crc32
    body                        raw little-endian array bytes, concatenated

The CRC covers the body, so truncation and bit rot are both detected.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .dense import DenseActor, DenseSpec
from .network import NetworkSpec, PopSAN

MAGIC = b"POPSANCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(Exception):
    """Base class for checkpoint problems."""


class CorruptCheckpointError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


_KINDS = {"popsan": (PopSAN, NetworkSpec), "dense": (DenseActor, DenseSpec)}


def save_checkpoint(net, path, extra=None):
    arrays, body, offset = [], [], 0
    for name, arr in net.params.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        raw = data.tobytes()
        arrays.append({"name": name, "dtype": "<f8", "shape": list(arr.shape), "offset": offset,
                       "nbytes": len(raw)})
        body.append(raw)
        offset += len(raw)
    body = b"".join(body)
    header = {"kind": net.kind, "spec": net.spec.to_dict(), "arrays": arrays,
              "crc32": zlib.crc32(body), "extra": extra or {}}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(body)
    return path


def read_checkpoint(path):
    """Parse a checkpoint into ``(header, {name: array})`` with full integrity checks."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < _PREFIX.size:
        raise CorruptCheckpointError(f"{path}: file too short ({len(blob)} bytes) to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}, not a checkpoint file")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads version {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(blob) < start + header_len:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"{path}: unreadable header ({e})") from e
    body = blob[start + header_len:]
    expected = sum(a["nbytes"] for a in header["arrays"])
    if len(body) != expected:
        raise CorruptCheckpointError(f"{path}: body has {len(body)} bytes, header declares {expected} (truncated?)")
    if zlib.crc32(body) != header["crc32"]:
        raise CorruptCheckpointError(f"{path}: checksum mismatch")
    arrays = {}
    for a in header["arrays"]:
        raw = body[a["offset"]:a["offset"] + a["nbytes"]]
        arrays[a["name"]] = np.frombuffer(raw, dtype=a["dtype"]).reshape(a["shape"]).astype(np.float64)
    return header, arrays


def load_checkpoint(path, spec=None):
    """Rebuild the network stored at ``path``.

    When ``spec`` is given, the parameters are loaded into a network built
    from it, and any disagreement in names or shapes is an error.
    """
    header, arrays = read_checkpoint(path)
    try:
        cls, spec_cls = _KINDS[header["kind"]]
    except KeyError:
        raise CorruptCheckpointError(f"{path}: unknown network kind {header.get('kind')!r}") from None
    if spec is None:
        spec = spec_cls.from_dict(header["spec"])
    elif not isinstance(spec, spec_cls):
        raise ShapeMismatchError(f"{path}: holds a {header['kind']} network, got a {type(spec).__name__}")
    net = cls(spec)
    missing = sorted(set(net.params) - set(arrays))
    unexpected = sorted(set(arrays) - set(net.params))
    if missing or unexpected:
        raise ShapeMismatchError(f"{path}: tensor names differ from spec (missing {missing}, unexpected {unexpected})")
    for name, target in net.params.items():
        if arrays[name].shape != target.shape:
            raise ShapeMismatchError(
                f"{path}: tensor {name!r} has shape {arrays[name].shape}, spec expects {target.shape}")
        np.copyto(target, arrays[name])
    return net
