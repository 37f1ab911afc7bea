"""Checkpoints: raw little-endian float64 tensors plus a JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .scorer import ScorerParams

FORMAT = "marginlab/checkpoint@1"


def save(params: ScorerParams, directory, stem: str = "params") -> tuple[Path, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blob, manifest = d / f"{stem}.bin", d / f"{stem}.json"
    entries, offset = [], 0
    with open(blob, "wb") as fh:
        for name, a in params.arrays():
            raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += len(raw)
    meta = {"format": FORMAT, "dtype": "float64", "byteorder": "little", "tensors": entries}
    manifest.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return blob, manifest


def load(directory, stem: str = "params") -> ScorerParams:
    d = Path(directory)
    meta = json.loads((d / f"{stem}.json").read_text())
    if meta.get("format") != FORMAT:
        raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
    raw = (d / f"{stem}.bin").read_bytes()
    tensors = {}
    for e in meta["tensors"]:
        count = int(np.prod(e["shape"], dtype=int))
        tensors[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=e["offset"]).reshape(e["shape"]).astype(float)
    n_layers = sum(1 for k in tensors if k.endswith(".weight")) - 1
    layers = [(tensors[f"layer{k}.weight"], tensors[f"layer{k}.bias"]) for k in range(n_layers)]
    return ScorerParams(layers, tensors["head.weight"], tensors["head.bias"])
