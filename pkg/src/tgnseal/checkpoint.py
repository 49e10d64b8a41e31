"""Named-tensor checkpoint container.

Format ``tensor-container-v1``: a single JSON document

    {"format": "tensor-container-v1",
     "tensors": {"<name>": {"shape": [d0, d1, ...], "data": [row-major floats]}}}

Floats are serialized with shortest round-trip repr, so save/load is exact
for float64 and output bytes are deterministic (keys sorted).
"""

from __future__ import annotations

import json

import numpy as np

FORMAT_TAG = "tensor-container-v1"


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    doc = {
        "format": FORMAT_TAG,
        "tensors": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
            for name, arr in tensors.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: not a {FORMAT_TAG} checkpoint")
    out = {}
    for name, entry in doc["tensors"].items():
        out[name] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return out
