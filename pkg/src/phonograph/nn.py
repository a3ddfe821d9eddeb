"""Parameter initialisation and small composite layers shared by the models."""

from __future__ import annotations

import numpy as np

from phonograph.tensor import Tensor, ops


def param(array) -> Tensor:
    return Tensor(np.array(array, dtype=np.float64), requires_grad=True)


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)))


def zeros(*shape):
    return param(np.zeros(shape))


def ones(*shape):
    return param(np.ones(shape))


def linear(x, w, b=None):
    y = ops.matmul(x, w)
    return y if b is None else ops.add(y, b)


def sinusoidal_positions(n, width):
    pos = np.arange(n)[:, None]
    freq = np.exp(-np.log(10000.0) * (np.arange(0, width, 2) / width))
    table = np.zeros((n, width))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: width // 2])
    return table


def init_encoder_block(rng, width, mlp_ratio=2):
    hidden = width * mlp_ratio
    return {
        "ln1_g": ones(width),
        "ln1_b": zeros(width),
        "w_qkv": glorot(rng, width, 3 * width),
        "b_qkv": zeros(3 * width),
        "w_o": glorot(rng, width, width),
        "b_o": zeros(width),
        "ln2_g": ones(width),
        "ln2_b": zeros(width),
        "w_1": glorot(rng, width, hidden),
        "b_1": zeros(hidden),
        "w_2": glorot(rng, hidden, width),
        "b_2": zeros(width),
    }


def self_attention(x, block, n_heads, return_weights=False):
    T, width = x.shape
    d = width // n_heads
    qkv = linear(x, block["w_qkv"], block["b_qkv"])

    def heads(part):
        cols = ops.slice_cols(qkv, part * width, (part + 1) * width)
        return ops.transpose(ops.reshape(cols, (T, n_heads, d)), (1, 0, 2))

    q, k, v = heads(0), heads(1), heads(2)
    scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(d))
    weights = ops.softmax(scores, axis=-1)
    mixed = ops.reshape(ops.transpose(ops.matmul(weights, v), (1, 0, 2)), (T, width))
    out = linear(mixed, block["w_o"], block["b_o"])
    return (out, weights) if return_weights else out


def encoder_block(x, block, n_heads):
    h = ops.layer_norm(x, block["ln1_g"], block["ln1_b"])
    x = ops.add(x, self_attention(h, block, n_heads))
    h = ops.layer_norm(x, block["ln2_g"], block["ln2_b"])
    h = linear(ops.elu(linear(h, block["w_1"], block["b_1"])), block["w_2"], block["b_2"])
    return ops.add(x, h)


def encoder(x, blocks, n_heads):
    """Position encoding followed by the block stack; no blocks is identity."""
    if not blocks:
        return x
    x = ops.add(x, Tensor(sinusoidal_positions(x.shape[0], x.shape[1])))
    for block in blocks:
        x = encoder_block(x, block, n_heads)
    return x


def copy_params(params):
    """Deep copy of a (possibly nested) parameter container."""
    if isinstance(params, Tensor):
        return Tensor(params.data.copy(), requires_grad=params.requires_grad)
    if isinstance(params, dict):
        return {k: copy_params(v) for k, v in params.items()}
    return [copy_params(v) for v in params]


def flatten(params, prefix=""):
    """Flatten a nested dict/list of Tensors into (name, Tensor) pairs."""
    if isinstance(params, Tensor):
        return [(prefix, params)]
    items = params.items() if isinstance(params, dict) else enumerate(params)
    out = []
    for key, value in items:
        name = f"{prefix}.{key}" if prefix else str(key)
        out.extend(flatten(value, name))
    return out
