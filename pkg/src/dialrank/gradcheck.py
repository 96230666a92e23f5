"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from typing import Callable

from .errors import NumericalError
from .params import ParameterStore
from .tensor import Tensor


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: ParameterStore,
    epsilon: float = 1e-5,
    names: list[str] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must be a deterministic scalar function of the parameters in
    ``params`` (a closure over them). The relative error per entry is
    |analytic - numeric| / max(1, |analytic|, |numeric|). ``names`` restricts
    the sweep to a subset of parameters; by default every entry is checked.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon {epsilon} outside the supported range [1e-7, 1e-4]")
    loss = loss_fn()
    if not math.isfinite(float(loss.data)):
        raise NumericalError("loss is not finite at the evaluation point")
    params.zero_grad()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else None) for name, t in params.items()}

    worst = 0.0
    for name in names if names is not None else params.names():
        tensor = params[name]
        flat = tensor.data.reshape(-1)
        a = analytic[name]
        a_flat = a.reshape(-1) if a is not None else None
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = float(loss_fn().data)
            flat[i] = orig - epsilon
            down = float(loss_fn().data)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericalError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * epsilon)
            ana = float(a_flat[i]) if a_flat is not None else 0.0
            rel = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            if rel > worst:
                worst = rel
    return worst
