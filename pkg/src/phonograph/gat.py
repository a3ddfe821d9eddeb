"""Phoneme graphs and the graph attention module (three GALs and an LSTM)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from phonograph import nn
from phonograph.tensor import Tensor, as_tensor, ops

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class PhonemeGraph:
    """Directed graph over pooled phonemes, stored 0-based.

    ``edges`` is an (E, 2) array of (src, dst) rows sorted by src then dst.
    Node ``i`` attends over ``neighbors(i)``: every dst of an edge leaving i.
    """

    n_nodes: int
    edges: np.ndarray

    @property
    def src(self):
        return self.edges[:, 0]

    @property
    def dst(self):
        return self.edges[:, 1]

    def neighbors(self, i):
        return self.dst[self.src == i].tolist()

    def edge_set(self):
        return {(int(s), int(d)) for s, d in self.edges}


def build_edges(n_nodes: int, span: int) -> PhonemeGraph:
    """Edges i -> min(i + k, n - 1) for k = 1..span, deduplicated, plus i -> i."""
    if n_nodes < 1 or span < 1:
        raise ValueError(f"need n_nodes >= 1 and span >= 1, got {n_nodes}, {span}")
    rows = []
    last = n_nodes - 1
    for i in range(n_nodes):
        targets = {i}
        targets.update(min(i + k, last) for k in range(1, span + 1))
        rows.extend((i, j) for j in sorted(targets))
    return PhonemeGraph(n_nodes, np.array(rows, dtype=np.int64).reshape(-1, 2))


def init_gal(rng, c_in, c_out):
    return {"W": nn.glorot(rng, c_in, c_out, shape=(c_out, c_in)), "a": nn.glorot(rng, 2 * c_out, 1, shape=(2 * c_out,))}


def init_lstm(rng, c_in, hidden, forget_bias=1.0):
    b = np.zeros(4 * hidden)
    b[hidden: 2 * hidden] = forget_bias
    return {
        "w_ih": nn.glorot(rng, c_in, 4 * hidden),
        "w_hh": nn.glorot(rng, hidden, 4 * hidden),
        "b": nn.param(b),
    }


def init_stack(rng, width, n_layers=3):
    return {
        "gals": [init_gal(rng, width, width) for _ in range(n_layers)],
        "lstm": init_lstm(rng, width, width),
    }


def _attention_logits(wf, graph, a):
    c_out = wf.shape[1]
    halves = ops.transpose(ops.reshape(a, (2, c_out)))  # (C', 2)
    parts = ops.matmul(wf, halves)  # (T, 2): a_left . Wf_i, a_right . Wf_j
    left = ops.reshape(ops.slice_cols(parts, 0, 1), (graph.n_nodes,))
    right = ops.reshape(ops.slice_cols(parts, 1, 2), (graph.n_nodes,))
    raw = ops.add(ops.take_rows(left, graph.src), ops.take_rows(right, graph.dst))
    return ops.leaky_relu(raw, LEAKY_SLOPE)


def _check(features, graph):
    if features.ndim != 2 or features.shape[0] != graph.n_nodes:
        raise ValueError(f"graph has {graph.n_nodes} nodes, features have shape {features.shape}")


def attention_coefficients(features, graph: PhonemeGraph, weights) -> Tensor:
    """Per-edge coefficients alpha_ij, softmax-normalised over each node's neighbors.

    Entry ``e`` belongs to edge ``graph.edges[e]``.
    """
    features = as_tensor(features)
    _check(features, graph)
    wf = ops.matmul(features, ops.transpose(weights["W"]))
    return ops.segment_softmax(_attention_logits(wf, graph, weights["a"]), graph.src, graph.n_nodes)


def gal_forward(features, graph: PhonemeGraph, weights) -> Tensor:
    """ELU of the attention-weighted sum of transformed neighbor features."""
    features = as_tensor(features)
    _check(features, graph)
    wf = ops.matmul(features, ops.transpose(weights["W"]))
    alpha = ops.segment_softmax(_attention_logits(wf, graph, weights["a"]), graph.src, graph.n_nodes)
    messages = ops.scale_rows(ops.take_rows(wf, graph.dst), alpha)
    return ops.elu(ops.scatter_rows(messages, graph.src, graph.n_nodes))


def lstm_forward(x, weights) -> Tensor:
    return ops.lstm(x, weights["w_ih"], weights["w_hh"], weights["b"])


def gat_forward(features, graph: PhonemeGraph, stack) -> Tensor:
    """GAL stack followed by a left-to-right LSTM; one hidden state per phoneme."""
    x = as_tensor(features)
    for gal in stack["gals"]:
        x = gal_forward(x, graph, gal)
    return lstm_forward(x, stack["lstm"])


def dense_coefficients(alpha, graph: PhonemeGraph) -> np.ndarray:
    """Scatter per-edge coefficients into a dense (T', T') matrix."""
    out = np.zeros((graph.n_nodes, graph.n_nodes))
    data = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha)
    out[graph.src, graph.dst] = data
    return out
