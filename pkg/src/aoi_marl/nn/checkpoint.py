"""Parameter checkpoints: a versioned JSON map of id -> shape + values.

Python's JSON float formatting round-trips float64 exactly, so save/load
is value-exact.
"""

from __future__ import annotations

import json
from typing import Iterable, Optional

import numpy as np

from ..errors import ConfigError, ShapeMismatch
from .tensor import Parameter

FORMAT_VERSION = 1


def save_checkpoint(path, params: Iterable[Parameter], meta: Optional[dict] = None) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "parameters": {
            p.id: {"shape": list(p.data.shape), "values": p.data.reshape(-1).tolist()}
            for p in params
        },
    }
    if meta is not None:
        payload["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return (id -> array, meta). Raises ConfigError on malformed files."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format_version: {version!r}")
    if "parameters" not in payload:
        raise ConfigError("checkpoint missing key: parameters")
    arrays = {}
    for pid, entry in payload["parameters"].items():
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        arrays[pid] = arr
    return arrays, payload.get("meta", {})


def restore_parameters(params: Iterable[Parameter], arrays: dict[str, np.ndarray]) -> None:
    """Copy stored values into parameters, matching by id."""
    for p in params:
        if p.id not in arrays:
            raise ShapeMismatch(f"checkpoint has no entry for parameter {p.id!r}")
        stored = arrays[p.id]
        if stored.shape != p.data.shape:
            raise ShapeMismatch(
                f"parameter {p.id!r}: checkpoint shape {stored.shape} != expected {p.data.shape}"
            )
        p.data[...] = stored
