"""Flat-binary array storage with a JSON manifest.

A checkpoint is a pair of files: ``<stem>.bin`` holding raw array bytes
back to back, and ``<stem>.json`` listing (name, shape, dtype, offset) per
entry plus free-form metadata. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_arrays(stem: Path, arrays: dict[str, np.ndarray],
                meta: Optional[dict] = None) -> None:
    """Write arrays to <stem>.bin + <stem>.json atomically."""
    stem = Path(stem)
    blob = bytearray()
    entries = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": arr.dtype.str,
            "offset": len(blob),
        })
        blob += arr.tobytes()
    manifest = {"entries": entries, "meta": meta or {}}
    _atomic_write(stem.with_suffix(".bin"), bytes(blob))
    _atomic_write(stem.with_suffix(".json"),
                  json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8"))


def load_arrays(stem: Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back arrays and metadata written by save_arrays."""
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(".json").read_text())
    blob = stem.with_suffix(".bin").read_bytes()
    arrays = {}
    for e in manifest["entries"]:
        dtype = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = e["offset"]
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, manifest["meta"]
