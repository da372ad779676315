"""``wamo-ckpt/1`` parameter checkpoints: JSON manifest plus a float32 blob.

The blob is every parameter, in manifest order (sorted by name), flattened
row-major and written as little-endian IEEE-754 binary32. Each manifest entry
records ``name``, ``group``, ``shape`` and ``offset`` (in floats).
"""
import json
from pathlib import Path

import numpy as np

from .model import ModelConfig, group_of

FORMAT_VERSION = "wamo-ckpt/1"
MANIFEST = "manifest.json"
BLOB = "params.bin"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params, model_cfg, meta=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        entries.append({"name": name, "group": group_of(name), "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT_VERSION,
        "dtype": "float32",
        "byte_order": "little",
        "config": model_cfg.to_dict(),
        "params": entries,
        "n_floats": offset,
        "blob": BLOB,
        "meta": meta or {},
    }
    (path / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    (path / BLOB).write_bytes(blob)
    return path


def load_checkpoint(path):
    """Returns ``(params, model_cfg, meta)``; params are float32 arrays."""
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}, expected {FORMAT_VERSION!r}")
    raw = (path / manifest.get("blob", BLOB)).read_bytes()
    n = int(manifest["n_floats"])
    if len(raw) != 4 * n:
        raise CheckpointError(f"checkpoint blob size mismatch: expected {4 * n} bytes, got {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f4")
    params = {}
    for e in manifest["params"]:
        size = int(np.prod(e["shape"], dtype=int))
        params[e["name"]] = flat[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(np.float32)
    cfg = ModelConfig(**manifest["config"])
    return params, cfg, manifest.get("meta", {})
