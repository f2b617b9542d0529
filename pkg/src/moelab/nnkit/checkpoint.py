"""Checkpoint directories: plain-text manifest + raw little-endian tensors.

Layout:
    <dir>/manifest.json          entries, layouts, sha256 per tensor, step
    <dir>/<entry>.<tensor>.f32   flat little-endian float32 payloads

Round-trips are bit-exact; the manifest hashes guard against torn writes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .core import ConfigError, ParamVector

MANIFEST = "manifest.json"


def _sha(values: np.ndarray) -> str:
    return hashlib.sha256(values.astype("<f4").tobytes()).hexdigest()


def save_checkpoint(directory, entries: dict, step: int = 0, meta: dict | None = None):
    """Write `entries` (name -> ParamVector) under `directory`."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"version": 1, "step": int(step), "meta": meta or {}, "entries": {}}
    for entry, pv in entries.items():
        rec = {"layout": [[n, list(s)] for n, s in pv.layout], "sha256": _sha(pv.values)}
        manifest["entries"][entry] = rec
        for name, _ in pv.layout:
            (d / f"{entry}.{name}.f32").write_bytes(pv.tensor(name).astype("<f4").tobytes())
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory):
    """Read a checkpoint directory; returns (entries, step, meta)."""
    d = Path(directory)
    path = d / MANIFEST
    if not path.exists():
        raise ConfigError(f"no manifest at {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("version") != 1:
        raise ConfigError(f"unsupported checkpoint version {manifest.get('version')}")
    entries = {}
    for entry, rec in manifest["entries"].items():
        layout = [(n, tuple(s)) for n, s in rec["layout"]]
        chunks = []
        for name, shape in layout:
            raw = (d / f"{entry}.{name}.f32").read_bytes()
            arr = np.frombuffer(raw, dtype="<f4")
            if arr.size != int(np.prod(shape)):
                raise ConfigError(f"tensor {entry}.{name} has wrong size on disk")
            chunks.append(arr)
        pv = ParamVector(layout, np.concatenate(chunks) if chunks else np.zeros(0, np.float32))
        if _sha(pv.values) != rec["sha256"]:
            raise ConfigError(f"hash mismatch for entry {entry!r}")
        entries[entry] = pv
    return entries, int(manifest["step"]), manifest["meta"]
