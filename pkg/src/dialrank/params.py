"""Named trainable parameters with attached optimizer moment state."""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigError
from .tensor import Tensor, default_dtype


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent, reproducible random stream derived from (seed, name)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=[seed, tag]))


class ParameterStore:
    """Owns every trainable tensor of a model, keyed by a unique id.

    Adam first/second moments live alongside each parameter so checkpoints
    can resume optimization exactly; ``step`` counts optimizer updates.
    """

    def __init__(self):
        self.tensors: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def create(self, name: str, shape: tuple, rng: np.random.Generator, init: str = "matrix") -> Tensor:
        """Register a parameter. ``init`` selects the initialization rule:

        matrix     uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], fan_in = shape[0]
        embedding  uniform scaled by the embedding width instead of the vocab size
        bias       zeros
        lstm_bias  zeros with the forget-gate slice set to 1.0
        ones       all ones (layer-norm gains)
        """
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter id {name!r}")
        dt = default_dtype()
        if init == "matrix":
            bound = 1.0 / np.sqrt(shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        elif init == "embedding":
            bound = 1.0 / np.sqrt(shape[1])
            data = rng.uniform(-bound, bound, size=shape)
        elif init == "bias":
            data = np.zeros(shape)
        elif init == "lstm_bias":
            data = np.zeros(shape)
            hid = shape[0] // 4
            data[hid : 2 * hid] = 1.0
        elif init == "ones":
            data = np.ones(shape)
        else:
            raise ConfigError(f"unknown init kind {init!r}")
        t = Tensor(np.asarray(data, dtype=dt), requires_grad=True)
        self.tensors[name] = t
        self.adam_m[name] = np.zeros(shape, dtype=dt)
        self.adam_v[name] = np.zeros(shape, dtype=dt)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def num_entries(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def collect_grads(self) -> dict[str, np.ndarray]:
        """Gradients for every parameter; zeros for params outside the graph."""
        out = {}
        for name, t in self.tensors.items():
            out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out
