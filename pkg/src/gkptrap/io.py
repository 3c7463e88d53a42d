"""Run persistence: binary state files, JSON documents and run manifests.

State container layout (all little-endian)::

    8 bytes   magic b"GKPSTATE"
    4 bytes   uint32 header length H
    H bytes   UTF-8 JSON header: format_version, kind, shape, mode_shape,
              has_ancilla, dtype ("<c16"), meta
    rest      the state array, C order, complex128
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .fock import OscState

MAGIC = b"GKPSTATE"
FORMAT_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def atomic_write_bytes(path, data):
    """Write via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    return atomic_write_bytes(path, text.encode())


def save_state(path, state, meta=None):
    """Write an :class:`OscState` to the binary container."""
    arr = np.ascontiguousarray(state.data, dtype="<c16")
    header = {"format_version": FORMAT_VERSION, "kind": state.kind, "shape": list(arr.shape),
              "mode_shape": list(state.mode_shape), "has_ancilla": state.has_ancilla,
              "dtype": "<c16", "meta": _jsonable(meta or {})}
    hb = json.dumps(header, sort_keys=True).encode()
    return atomic_write_bytes(path, MAGIC + struct.pack("<I", len(hb)) + hb + arr.tobytes())


def load_state(path):
    """Read a state file; returns ``(OscState, header)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise InvalidInput(f"{path} is not a state file")
    (n,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + n])
    if header.get("format_version") != FORMAT_VERSION:
        raise InvalidInput(f"unsupported state format {header.get('format_version')}")
    arr = np.frombuffer(raw[12 + n:], dtype="<c16")
    shape = tuple(header["shape"])
    if arr.size != int(np.prod(shape)):
        raise InvalidInput(f"{path}: payload size does not match header shape {shape}")
    arr = arr.reshape(shape).astype(complex)
    return OscState(arr, tuple(header["mode_shape"]), header["has_ancilla"], norm_tol=1e-6), header


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir, command, config, outputs, warnings_list, started, finished, version,
                   extra=None):
    """Write ``manifest.json`` listing every output with its sha256."""
    out_dir = Path(out_dir)
    inventory = {}
    for p in sorted(outputs):
        p = Path(p)
        inventory[str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p)] = sha256_file(p)
    doc = {"tool": "gkptrap", "version": version, "command": command, "config": config,
           "started": started, "finished": finished, "warnings": list(warnings_list),
           "outputs": inventory}
    doc.update(extra or {})
    return write_json(out_dir / "manifest.json", doc)
