"""Deterministic on-disk containers.

Checkpoints are a single binary file: a versioned JSON header describing
named float64 arrays, then the raw little-endian bytes in manifest order.
The writer produces byte-identical files for identical contents (no
timestamps, sorted keys), which the determinism tests rely on.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"GRUCLUST-ARRAYS v1\n"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays plus a JSON-serializable metadata dict."""
    manifest = []
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        manifest.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps(
        {"meta": meta or {}, "arrays": manifest}, sort_keys=True, separators=(",", ":")
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header)
        fh.write(b"\n")
        for b in blobs:
            fh.write(b)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_arrays`; round-trips bit-exactly."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path}: not a recognized checkpoint file")
    body = raw[len(MAGIC):]
    nl = body.index(b"\n")
    header = json.loads(body[:nl])
    offset = nl + 1
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(body[offset:offset + nbytes], dtype="<f8").reshape(shape)
        arrays[entry["name"]] = arr.copy()
        offset += nbytes
    if offset != len(body):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return arrays, header["meta"]


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path, header: list[str], rows) -> None:
    """Minimal CSV writer with repr-exact float formatting.

    Values are formatted with ``repr`` so floats round-trip and two runs
    with identical numbers produce identical bytes.
    """
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)
