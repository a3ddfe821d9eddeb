"""Differentiable primitives.

Shapes must conform exactly; the only implicit broadcast is a 1-D bias
added to every row of a matrix (or a python scalar).
"""

from __future__ import annotations

import numpy as np

from phonograph import kernels
from phonograph.tensor.core import Tensor, as_tensor


class ShapeError(ValueError):
    """Operands of a primitive do not conform."""

    def __init__(self, op, *shapes):
        detail = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")
        self.op = op
        self.shapes = shapes


def _is_scalar(x):
    return isinstance(x, (int, float, np.floating, np.integer))


# --- elementwise arithmetic -------------------------------------------------


def add(a, b):
    if _is_scalar(b):
        a = as_tensor(a)
        return Tensor.from_op(a.data + float(b), (a,), lambda g: (g,), "add")
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        axes = tuple(range(a.ndim - 1))
        return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=axes)), "add_bias")
    raise ShapeError("add", a.shape, b.shape)


def neg(a):
    a = as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b):
    if _is_scalar(b):
        return add(a, -float(b))
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("sub", a.shape, b.shape)
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    if _is_scalar(b):
        a = as_tensor(a)
        s = float(b)
        return Tensor.from_op(a.data * s, (a,), lambda g: (g * s,), "scale")
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return Tensor.from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale_rows(x, s):
    """Multiply row ``r`` of an (R, C) matrix by ``s[r]``."""
    x, s = as_tensor(x), as_tensor(s)
    if x.ndim != 2 or s.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError("scale_rows", x.shape, s.shape)
    xd, sd = x.data, s.data

    def back(g):
        return g * sd[:, None], (g * xd).sum(axis=1)

    return Tensor.from_op(xd * sd[:, None], (x, s), back, "scale_rows")


# --- linear algebra and shape ----------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ok = (
        a.ndim == b.ndim
        and a.ndim in (2, 3)
        and a.shape[-1] == b.shape[-2]
        and (a.ndim == 2 or a.shape[0] == b.shape[0])
    )
    if not ok:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(ad @ bd, (a, b), back, "matmul")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError("reshape", a.shape, shape)
    old = a.shape
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(x != y for k, (x, y) in enumerate(zip(ref, other)) if k != axis % len(ref)):
            raise ShapeError("concat", tensors[0].shape, t.shape)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def _row_sum(values, idx, n_rows):
    """Sum ``values[i]`` into row ``idx[i]`` of an ``n_rows`` array (bincount beats ``np.add.at``)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        return np.bincount(idx, weights=values, minlength=n_rows)
    tail = values.shape[1:]
    width = int(np.prod(tail))
    flat = (idx[:, None] * width + np.arange(width)).ravel()
    out = np.bincount(flat, weights=values.reshape(-1), minlength=n_rows * width)
    return out.reshape((n_rows,) + tail)


def take_rows(x, index):
    """Gather rows of a matrix; repeated indices accumulate in backward."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    n = x.shape[0]

    def back(g):
        return (_row_sum(g, idx, n),)

    return Tensor.from_op(x.data[idx], (x,), back, "take_rows")


def scatter_rows(x, index, n_rows):
    """Sum rows of ``x`` into ``n_rows`` buckets given by ``index``."""
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape[0] != x.shape[0]:
        raise ShapeError("scatter_rows", x.shape, idx.shape)
    out = _row_sum(x.data, idx, n_rows)
    return Tensor.from_op(out, (x,), lambda g: (g[idx],), "scatter_rows")


def slice_cols(x, start, stop):
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return Tensor.from_op(x.data[..., start:stop], (x,), back, "slice_cols")


# --- reductions ---------------------------------------------------------------


def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor.from_op(np.asarray(x.data.sum(axis=axis)), (x,), back, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / count)


# --- nonlinearities ---------------------------------------------------------


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * y,), "exp")


def log(x):
    x = as_tensor(x)
    xd = x.data
    return Tensor.from_op(np.log(xd), (x,), lambda g: (g / xd,), "log")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor.from_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor.from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def leaky_relu(x, slope):
    x = as_tensor(x)
    xd = x.data
    d = np.where(xd > 0, 1.0, float(slope))
    return Tensor.from_op(xd * d, (x,), lambda g: (g * d,), "leaky_relu")


def elu(x, alpha=1.0):
    x = as_tensor(x)
    xd = x.data
    neg_part = alpha * np.expm1(np.minimum(xd, 0.0))
    y = np.where(xd > 0, xd, neg_part)
    d = np.where(xd > 0, 1.0, neg_part + alpha)
    return Tensor.from_op(y, (x,), lambda g: (g * d,), "elu")


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, (x,), back, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor.from_op(y, (x,), back, "log_softmax")


def segment_softmax(scores, segment, n_segments):
    """Softmax of a 1-D score vector within each index set.

    ``segment[e]`` names the set entry ``e`` belongs to; every set in
    ``range(n_segments)`` that appears is normalized independently.
    """
    scores = as_tensor(scores)
    seg = np.asarray(segment, dtype=np.int64)
    if scores.ndim != 1 or seg.shape != scores.shape:
        raise ShapeError("segment_softmax", scores.shape, seg.shape)
    s = scores.data
    peak = np.full(n_segments, -np.inf)
    np.maximum.at(peak, seg, s)
    e = np.exp(s - peak[seg])
    denom = _row_sum(e, seg, n_segments)
    y = e / denom[seg]

    def back(g):
        dot = _row_sum(g * y, seg, n_segments)
        return (y * (g - dot[seg]),)

    return Tensor.from_op(y, (scores,), back, "segment_softmax")


# --- fused layers -----------------------------------------------------------


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize each row of an (R, C) matrix, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    xd = x.data
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def back(g):
        gx = g * gd
        c = xd.shape[1]
        dx = inv / c * (c * gx - gx.sum(axis=1, keepdims=True) - xhat * (gx * xhat).sum(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return Tensor.from_op(xhat * gd + beta.data, (x, gamma, beta), back, "layer_norm")


def conv1d(x, weight, bias, stride=1):
    """Valid 1-D convolution over time.

    ``x`` is (T, C_in), ``weight`` (C_out, C_in, K), ``bias`` (C_out,).
    Output is (floor((T - K) / stride) + 1, C_out).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 3 or weight.shape[1] != x.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeError("conv1d", x.shape, weight.shape, bias.shape)
    T, cin = x.shape
    cout, _, k = weight.shape
    if T < k:
        raise ShapeError("conv1d", x.shape, weight.shape)
    n_out = (T - k) // stride + 1
    xd = x.data
    # cols[t, j, c] = x[t * stride + j, c]
    cols = np.stack([xd[j: j + stride * (n_out - 1) + 1: stride] for j in range(k)], axis=1)
    flat = cols.reshape(n_out, k * cin)
    wmat = weight.data.transpose(2, 1, 0).reshape(k * cin, cout)
    out = flat @ wmat + bias.data

    def back(g):
        gx = None
        if x.requires_grad:
            gcols = (g @ wmat.T).reshape(n_out, k, cin)
            gx = np.zeros((T, cin))
            for j in range(k):
                gx[j: j + stride * (n_out - 1) + 1: stride] += gcols[:, j]
        gw = (flat.T @ g).reshape(k, cin, cout).transpose(2, 1, 0) if weight.requires_grad else None
        return gx, gw, g.sum(axis=0)

    return Tensor.from_op(out, (x, weight, bias), back, "conv1d")


def lstm(x, w_ih, w_hh, bias):
    """Single-layer unidirectional LSTM over the rows of ``x``.

    ``w_ih`` is (I, 4H), ``w_hh`` (H, 4H), ``bias`` (4H,), gate order
    input/forget/cell/output; initial state is zero. Returns (T, H).
    """
    x, w_ih, w_hh, bias = (as_tensor(t) for t in (x, w_ih, w_hh, bias))
    if (
        x.ndim != 2
        or w_ih.shape[0] != x.shape[1]
        or w_hh.shape[1] != w_ih.shape[1]
        or w_hh.shape[1] != 4 * w_hh.shape[0]
        or bias.shape != (w_ih.shape[1],)
    ):
        raise ShapeError("lstm", x.shape, w_ih.shape, w_hh.shape, bias.shape)
    xd, wih, whh = x.data, w_ih.data, w_hh.data
    xw = xd @ wih + bias.data
    hs, cs, gates = kernels.lstm_forward(xw, whh)

    def back(g):
        dz, dw_hh = kernels.lstm_backward(g, whh, hs, cs, gates)
        return dz @ wih.T, xd.T @ dz, dw_hh, dz.sum(axis=0)

    return Tensor.from_op(hs, (x, w_ih, w_hh, bias), back, "lstm")


def cosine_similarity_matrix(a, b, eps=1e-12):
    """Pairwise cosine similarity between rows of (N, D) and (M, D).

    ``eps`` is added to each row norm so zero rows give similarity 0.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError("cosine_similarity", a.shape, b.shape)
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=1)) + eps
    nb = np.sqrt((bd * bd).sum(axis=1)) + eps
    an = ad / na[:, None]
    bn = bd / nb[:, None]
    sim = an @ bn.T

    def back(g):
        ga = gb = None
        if a.requires_grad:
            gan = g @ bn
            # d(an)/d(a) for an = a / (|a| + eps)
            raw = np.sqrt((ad * ad).sum(axis=1))
            safe = np.where(raw > 0, raw, 1.0)
            ga = gan / na[:, None] - ad * ((gan * ad).sum(axis=1) / (na * na * safe))[:, None]
        if b.requires_grad:
            gbn = g.T @ an
            raw = np.sqrt((bd * bd).sum(axis=1))
            safe = np.where(raw > 0, raw, 1.0)
            gb = gbn / nb[:, None] - bd * ((gbn * bd).sum(axis=1) / (nb * nb * safe))[:, None]
        return ga, gb

    return Tensor.from_op(sim, (a, b), back, "cosine_similarity")
