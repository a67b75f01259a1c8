"""Checkpoint container: one file holding a JSON manifest plus named
little-endian float32 parameter blobs, each content-hashed.

Layout: 8-byte magic | uint64 LE header length | header JSON | blob payload.
The header's manifest_hash covers the manifest and every blob hash, and the
writer is byte-deterministic for identical inputs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .core import NormRange
from .model import FarmModel, ModelConfig

MAGIC = b"FARMCKPT"


@dataclass
class Checkpoint:
    manifest: dict
    blobs: dict[str, np.ndarray]


def _manifest_hash(manifest: dict, blob_hashes: list[str]) -> str:
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256((payload + "".join(sorted(blob_hashes))).encode()).hexdigest()


def save_checkpoint(path: str | Path, manifest: dict,
                    blobs: dict[str, np.ndarray]) -> str:
    """Write manifest + blobs; returns the combined manifest hash."""
    entries, payload = [], []
    offset = 0
    hashes = []
    for name in sorted(blobs):
        data = np.ascontiguousarray(blobs[name], dtype="<f4").tobytes()
        digest = hashlib.sha256(data).hexdigest()
        entries.append({"name": name, "shape": list(blobs[name].shape),
                        "dtype": "<f4", "offset": offset, "nbytes": len(data),
                        "sha256": digest})
        payload.append(data)
        hashes.append(digest)
        offset += len(data)
    total_hash = _manifest_hash(manifest, hashes)
    header = json.dumps({"format": 1, "manifest": manifest, "blobs": entries,
                         "manifest_hash": total_hash},
                        sort_keys=True, separators=(",", ":")).encode()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for chunk in payload:
            f.write(chunk)
    return total_hash


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a farm checkpoint")
    hlen = struct.unpack("<Q", raw[8:16])[0]
    header = json.loads(raw[16:16 + hlen])
    base = 16 + hlen
    blobs = {}
    hashes = []
    for entry in header["blobs"]:
        start = base + entry["offset"]
        data = raw[start:start + entry["nbytes"]]
        digest = hashlib.sha256(data).hexdigest()
        if digest != entry["sha256"]:
            raise ValueError(f"{path}: blob {entry['name']} fails its content hash")
        hashes.append(digest)
        blobs[entry["name"]] = np.frombuffer(data, dtype="<f4").reshape(entry["shape"]).copy()
    if _manifest_hash(header["manifest"], hashes) != header["manifest_hash"]:
        raise ValueError(f"{path}: manifest hash mismatch")
    return Checkpoint(manifest=header["manifest"], blobs=blobs)


def save_model(path: str | Path, model: FarmModel, *, stage: str, step: int,
               dataset_hash: str, norm: NormRange, seed: int,
               extra: dict | None = None) -> str:
    from . import version_string
    manifest = {"model": model.cfg.to_dict(), "stage": stage, "step": step,
                "dataset_hash": dataset_hash, "norm": norm.to_dict(),
                "seed": seed, "version": version_string()}
    if extra:
        manifest.update(extra)
    blobs = {name: p.detach().cpu().numpy() for name, p in model.state_dict().items()}
    return save_checkpoint(path, manifest, blobs)


def load_model(path: str | Path, dtype: torch.dtype = torch.float32
               ) -> tuple[FarmModel, dict]:
    ckpt = load_checkpoint(path)
    cfg = ModelConfig.from_dict(ckpt.manifest["model"])
    model = FarmModel(cfg).to(dtype)
    state = {name: torch.from_numpy(arr).to(dtype) for name, arr in ckpt.blobs.items()}
    model.load_state_dict(state, strict=True)
    model.eval()
    return model, ckpt.manifest
