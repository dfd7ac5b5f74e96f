"""Checkpoints: a human-readable JSON manifest plus a raw float64 blob.

The manifest records the format version, the full effective config and its
hash, the training step, and a name -> (shape, offset) table; the blob is
the little-endian concatenation of every parameter in lexicographic name
order.  Loads are all-or-nothing and bit-exact.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .config import RunConfig, config_from_dict, config_hash, config_to_dict
from .errors import IntegrityError
from .params import ParameterSet
from .tensor import Tensor

FORMAT_VERSION = 1


def _prefix(path: str) -> str:
    for ext in (".json", ".bin"):
        if path.endswith(ext):
            return path[:-len(ext)]
    return path


def save_checkpoint(params: ParameterSet, cfg: RunConfig, step: int,
                    path: str) -> None:
    """Write `<path>.json` (manifest) and `<path>.bin` (parameter blob)."""
    prefix = _prefix(path)
    table = []
    chunks = []
    offset = 0
    for name, p in params.items():
        table.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").reshape(-1))
        offset += p.size
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(step),
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "params": table,
    }
    with open(prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    blob.astype("<f8").tofile(prefix + ".bin")


def load_checkpoint(path: str) -> tuple[ParameterSet, RunConfig, int]:
    """Read a manifest+blob pair back into parameters, config, and step."""
    prefix = _prefix(path)
    manifest_path, blob_path = prefix + ".json", prefix + ".bin"
    if not os.path.exists(manifest_path):
        raise IntegrityError(f"missing checkpoint manifest {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"corrupt checkpoint manifest: {exc}") from None

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise IntegrityError(
            f"checkpoint format version {version} != supported {FORMAT_VERSION}")
    cfg = config_from_dict(manifest["config"])
    if config_hash(cfg) != manifest.get("config_hash"):
        raise IntegrityError("checkpoint config hash does not match its config")

    if not os.path.exists(blob_path):
        raise IntegrityError(f"missing checkpoint blob {blob_path}")
    blob = np.fromfile(blob_path, dtype="<f8")
    params = ParameterSet()
    total = 0
    for entry in manifest["params"]:
        shape = tuple(int(s) for s in entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        offset = int(entry["offset"])
        if offset + size > blob.size:
            raise IntegrityError(
                f"parameter '{entry['name']}' overruns blob "
                f"({offset}+{size} > {blob.size})")
        data = blob[offset:offset + size].reshape(shape).astype(np.float64)
        params.add(entry["name"], Tensor(data, requires_grad=True))
        total += size
    if total != blob.size:
        raise IntegrityError(
            f"blob holds {blob.size} values but manifest accounts for {total}")
    return params, cfg, int(manifest["step"])
