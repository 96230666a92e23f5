import math

import numpy as np
import pytest

from dialrank.params import ParameterStore
from dialrank.tensor import Tensor


def store_with(**arrays) -> ParameterStore:
    """A ParameterStore holding the given arrays as trainable parameters."""
    store = ParameterStore()
    for name, value in arrays.items():
        value = np.asarray(value, dtype=np.float64)
        store.tensors[name] = Tensor(value, requires_grad=True)
        store.adam_m[name] = np.zeros_like(value)
        store.adam_v[name] = np.zeros_like(value)
    return store


def oracle_lstm(xs, wx, wh, b):
    """Scalar-loop LSTM evaluated step by step with math.* only.

    Independent of the library path: no numpy vector ops, plain float lists.
    Gate layout matches the implementation: [input, forget, output, cell].
    """
    din = len(xs[0])
    dh = wh.shape[0]

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    h = [0.0] * dh
    c = [0.0] * dh
    outputs = []
    for x in xs:
        z = [0.0] * (4 * dh)
        for j in range(4 * dh):
            acc = b[j]
            for i in range(din):
                acc += x[i] * wx[i, j]
            for i in range(dh):
                acc += h[i] * wh[i, j]
            z[j] = acc
        new_h, new_c = [0.0] * dh, [0.0] * dh
        for u in range(dh):
            gi = sig(z[u])
            gf = sig(z[dh + u])
            go = sig(z[2 * dh + u])
            gg = math.tanh(z[3 * dh + u])
            new_c[u] = gf * c[u] + gi * gg
            new_h[u] = go * math.tanh(new_c[u])
        h, c = new_h, new_c
        outputs.append(list(h))
    return outputs, (h, c)


@pytest.fixture(autouse=True)
def _float64():
    from dialrank.tensor import set_default_dtype

    set_default_dtype("float64")
    yield
