"""Layer compositions built on the tensor primitives: LSTM stacks,
multi-head attention, transformer blocks, layer norm."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .params import ParameterStore
from .tensor import (
    Tensor,
    add,
    concat,
    constant,
    getitem,
    lstm_cell,
    matmul,
    power,
    relu,
    softmax,
    tmean,
    transpose,
)

NEG_INF = -1e9  # large finite mask value; exp underflows to exactly 0


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# -- LSTM -------------------------------------------------------------------


def create_lstm_params(store: ParameterStore, prefix: str, input_dim: int, hidden_dim: int,
                       num_layers: int, rng) -> None:
    for layer in range(num_layers):
        in_dim = input_dim if layer == 0 else hidden_dim
        store.create(f"{prefix}.l{layer}.wx", (in_dim, 4 * hidden_dim), rng, "matrix")
        store.create(f"{prefix}.l{layer}.wh", (hidden_dim, 4 * hidden_dim), rng, "matrix")
        store.create(f"{prefix}.l{layer}.b", (4 * hidden_dim,), rng, "lstm_bias")


def lstm_forward(
    inputs: list[Tensor],
    initial_state: tuple[Tensor, Tensor] | None,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
) -> tuple[list[Tensor], tuple[Tensor, Tensor]]:
    """Run one LSTM layer over a sequence of vectors.

    Returns the per-step hidden states and the final (h, c); the final h is
    the last element of the outputs.
    """
    if len(inputs) == 0:
        raise ConfigError("lstm_forward requires a non-empty input sequence")
    hidden_dim = wh.shape[0]
    if wx.shape[0] != inputs[0].shape[-1]:
        raise ConfigError(
            f"lstm input dim {inputs[0].shape[-1]} does not match weight fan-in {wx.shape[0]}"
        )
    if initial_state is None:
        h = constant(np.zeros(hidden_dim))
        c = constant(np.zeros(hidden_dim))
    else:
        h, c = initial_state
    outputs = []
    for x in inputs:
        h, c = lstm_cell(x, h, c, wx, wh, b)
        outputs.append(h)
    return outputs, (h, c)


def lstm_stack(
    store: ParameterStore,
    prefix: str,
    inputs: list[Tensor],
    num_layers: int,
    initial_states: list[tuple[Tensor, Tensor]] | None = None,
) -> tuple[list[Tensor], list[tuple[Tensor, Tensor]]]:
    """Multi-layer LSTM; returns top-layer states and per-layer final (h, c)."""
    states = inputs
    finals = []
    for layer in range(num_layers):
        init = initial_states[layer] if initial_states is not None else None
        states, final = lstm_forward(
            states,
            init,
            store[f"{prefix}.l{layer}.wx"],
            store[f"{prefix}.l{layer}.wh"],
            store[f"{prefix}.l{layer}.b"],
        )
        finals.append(final)
    return states, finals


def lstm_step_stack(
    store: ParameterStore,
    prefix: str,
    x: Tensor,
    state: list[tuple[Tensor, Tensor]],
) -> tuple[Tensor, list[tuple[Tensor, Tensor]]]:
    """One time step through a multi-layer LSTM (incremental decoding)."""
    new_state = []
    inp = x
    for layer, (h, c) in enumerate(state):
        h2, c2 = lstm_cell(
            inp, h, c,
            store[f"{prefix}.l{layer}.wx"],
            store[f"{prefix}.l{layer}.wh"],
            store[f"{prefix}.l{layer}.b"],
        )
        new_state.append((h2, c2))
        inp = h2
    return inp, new_state


def zero_lstm_state(num_layers: int, hidden_dim: int) -> list[tuple[Tensor, Tensor]]:
    return [
        (constant(np.zeros(hidden_dim)), constant(np.zeros(hidden_dim)))
        for _ in range(num_layers)
    ]


# -- transformer --------------------------------------------------------------


def create_attention_params(store: ParameterStore, prefix: str, query_dim: int,
                            memory_dim: int, model_dim: int, rng) -> None:
    store.create(f"{prefix}.wq", (query_dim, model_dim), rng, "matrix")
    store.create(f"{prefix}.wk", (memory_dim, model_dim), rng, "matrix")
    store.create(f"{prefix}.wv", (memory_dim, model_dim), rng, "matrix")
    store.create(f"{prefix}.wo", (model_dim, model_dim), rng, "matrix")
    store.create(f"{prefix}.bo", (model_dim,), rng, "bias")


def multi_head_attention(
    store: ParameterStore,
    prefix: str,
    queries: Tensor,
    memory: Tensor,
    num_heads: int,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product attention, (T_q, d) x (T_m, d_m) -> (T_q, d)."""
    q = matmul(queries, store[f"{prefix}.wq"])
    k = matmul(memory, store[f"{prefix}.wk"])
    v = matmul(memory, store[f"{prefix}.wv"])
    model_dim = q.shape[1]
    head_dim = model_dim // num_heads
    scale = 1.0 / np.sqrt(head_dim)
    heads = []
    for i in range(num_heads):
        cols = slice(i * head_dim, (i + 1) * head_dim)
        qh = getitem(q, (slice(None), cols))
        kh = getitem(k, (slice(None), cols))
        vh = getitem(v, (slice(None), cols))
        scores = matmul(qh, transpose(kh)) * scale
        if mask is not None:
            scores = add(scores, constant(mask))
        weights = softmax(scores, axis=-1)
        heads.append(matmul(weights, vh))
    merged = concat(heads, axis=1)
    return linear(merged, store[f"{prefix}.wo"], store[f"{prefix}.bo"])


def create_layer_norm_params(store: ParameterStore, prefix: str, dim: int, rng) -> None:
    store.create(f"{prefix}.g", (dim,), rng, "ones")
    store.create(f"{prefix}.b", (dim,), rng, "bias")


def layer_norm(store: ParameterStore, prefix: str, x: Tensor, eps: float = 1e-5) -> Tensor:
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(centered * centered, axis=-1, keepdims=True)
    inv = power(add(var, constant(eps)), -0.5)
    return add(centered * inv * store[f"{prefix}.g"], store[f"{prefix}.b"])


def create_ffn_params(store: ParameterStore, prefix: str, dim: int, ffn_dim: int, rng) -> None:
    store.create(f"{prefix}.w1", (dim, ffn_dim), rng, "matrix")
    store.create(f"{prefix}.b1", (ffn_dim,), rng, "bias")
    store.create(f"{prefix}.w2", (ffn_dim, dim), rng, "matrix")
    store.create(f"{prefix}.b2", (dim,), rng, "bias")


def feed_forward(store: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    return linear(relu(linear(x, store[f"{prefix}.w1"], store[f"{prefix}.b1"])),
                  store[f"{prefix}.w2"], store[f"{prefix}.b2"])


def create_transformer_encoder_params(store: ParameterStore, prefix: str, dim: int,
                                      num_layers: int, num_heads: int, ffn_dim: int, rng) -> None:
    del num_heads  # head count shapes nothing; projections stay (dim, dim)
    for layer in range(num_layers):
        create_attention_params(store, f"{prefix}.t{layer}.self", dim, dim, dim, rng)
        create_layer_norm_params(store, f"{prefix}.t{layer}.ln1", dim, rng)
        create_ffn_params(store, f"{prefix}.t{layer}.ffn", dim, ffn_dim, rng)
        create_layer_norm_params(store, f"{prefix}.t{layer}.ln2", dim, rng)


def transformer_encoder(
    store: ParameterStore,
    prefix: str,
    x: Tensor,
    num_layers: int,
    num_heads: int,
) -> Tensor:
    for layer in range(num_layers):
        attn = multi_head_attention(store, f"{prefix}.t{layer}.self", x, x, num_heads)
        x = layer_norm(store, f"{prefix}.t{layer}.ln1", add(x, attn))
        x = layer_norm(store, f"{prefix}.t{layer}.ln2", add(x, feed_forward(store, f"{prefix}.t{layer}.ffn", x)))
    return x


def create_transformer_decoder_params(store: ParameterStore, prefix: str, dim: int,
                                      memory_dim: int, num_layers: int, num_heads: int,
                                      ffn_dim: int, rng) -> None:
    del num_heads
    for layer in range(num_layers):
        create_attention_params(store, f"{prefix}.t{layer}.self", dim, dim, dim, rng)
        create_layer_norm_params(store, f"{prefix}.t{layer}.ln1", dim, rng)
        create_attention_params(store, f"{prefix}.t{layer}.cross", dim, memory_dim, dim, rng)
        create_layer_norm_params(store, f"{prefix}.t{layer}.ln2", dim, rng)
        create_ffn_params(store, f"{prefix}.t{layer}.ffn", dim, ffn_dim, rng)
        create_layer_norm_params(store, f"{prefix}.t{layer}.ln3", dim, rng)


def causal_mask(length: int) -> np.ndarray:
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = NEG_INF
    return mask


def transformer_decoder(
    store: ParameterStore,
    prefix: str,
    x: Tensor,
    memory: Tensor,
    num_layers: int,
    num_heads: int,
) -> Tensor:
    mask = causal_mask(x.shape[0])
    for layer in range(num_layers):
        attn = multi_head_attention(store, f"{prefix}.t{layer}.self", x, x, num_heads, mask=mask)
        x = layer_norm(store, f"{prefix}.t{layer}.ln1", add(x, attn))
        cross = multi_head_attention(store, f"{prefix}.t{layer}.cross", x, memory, num_heads)
        x = layer_norm(store, f"{prefix}.t{layer}.ln2", add(x, cross))
        x = layer_norm(store, f"{prefix}.t{layer}.ln3", add(x, feed_forward(store, f"{prefix}.t{layer}.ffn", x)))
    return x
