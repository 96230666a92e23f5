"""Versioned checkpoint files: parameters, Adam moments, step count.

JSON with full-precision floats (Python's float repr round-trips exactly),
so save -> load reproduces every value bit for bit. The model config and
vocabulary ride along so a checkpoint is self-contained for the CLI.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError
from .params import ParameterStore
from .tensor import Tensor, default_dtype

FORMAT = "dialrank-checkpoint"
VERSION = 1


def save_checkpoint(
    path: str,
    params: ParameterStore,
    model_config: dict | None = None,
    vocab_tokens: list[str] | None = None,
    extra: dict | None = None,
) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "step": params.step,
        "params": {
            name: {"shape": list(t.data.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
        "adam_m": {name: m.reshape(-1).tolist() for name, m in params.adam_m.items()},
        "adam_v": {name: v.reshape(-1).tolist() for name, v in params.adam_v.items()},
    }
    if model_config is not None:
        doc["model_config"] = model_config
    if vocab_tokens is not None:
        doc["vocab"] = vocab_tokens
    if extra:
        doc["extra"] = extra
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> dict:
    """Raw checkpoint document, validated for format and version."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise DataError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return doc


def restore_params(doc: dict, params: ParameterStore) -> None:
    """Load a checkpoint document into an existing, identically-shaped store."""
    dt = default_dtype()
    saved = doc["params"]
    if set(saved) != set(params.tensors):
        missing = set(params.tensors) - set(saved)
        surplus = set(saved) - set(params.tensors)
        raise DataError(f"checkpoint parameter mismatch: missing={sorted(missing)} surplus={sorted(surplus)}")
    for name, spec in saved.items():
        shape = tuple(spec["shape"])
        if params.tensors[name].data.shape != shape:
            raise DataError(f"checkpoint shape mismatch for {name}: {shape}")
        params.tensors[name] = Tensor(
            np.asarray(spec["values"], dtype=dt).reshape(shape), requires_grad=True
        )
        params.adam_m[name] = np.asarray(doc["adam_m"][name], dtype=dt).reshape(shape)
        params.adam_v[name] = np.asarray(doc["adam_v"][name], dtype=dt).reshape(shape)
    params.step = int(doc["step"])
