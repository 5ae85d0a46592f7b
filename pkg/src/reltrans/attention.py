"""Multi-head relational attention and the transformer node update.

Queries, keys and values are formed per ordered node pair ``(i, j)`` from
the node vectors and the directed edge vector ``e_ij``::

    q_ij = n_i W_n^Q + e_ij W_e^Q + b^Q
    k_ij = n_j W_n^K + e_ij W_e^K + b^K
    v_ij = n_j W_n^V + e_ij W_e^V + b^V

With a zero-width edge tensor the layer is exactly the standard transformer
layer, which is how :func:`reltrans.baselines.vanilla_transformer_layer` is
built.

Node tensors have shape ``(..., N, d_n)`` and edge tensors
``(..., N, N, d_e)``; any leading axes are treated as a batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, parameter
from .errors import ShapeError
from .params import LayerNormParams, Linear, ParamGroup, glorot, zeros


@dataclass
class AttentionWeights(ParamGroup):
    wq_n: Tensor
    wk_n: Tensor
    wv_n: Tensor
    wq_e: Tensor
    wk_e: Tensor
    wv_e: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    out: Linear
    num_heads: int = 1
    head_size: int = 1

    @classmethod
    def init(cls, rng, d_n: int, d_e: int, num_heads: int, head_size: int) -> "AttentionWeights":
        width = num_heads * head_size
        mats = []
        for _ in range(3):
            # the stacked [W_n; W_e] is what the fan-in refers to
            stacked = glorot(rng, d_n + d_e, width)
            mats.append((stacked[:d_n], stacked[d_n:]))
        (qn, qe), (kn, ke), (vn, ve) = mats
        return cls(
            parameter(qn), parameter(kn), parameter(vn),
            parameter(qe), parameter(ke), parameter(ve),
            zeros(width), zeros(width), zeros(width),
            Linear.init(rng, width, d_n),
            num_heads, head_size,
        )

    @property
    def d_n(self) -> int:
        return self.wq_n.shape[0]

    @property
    def d_e(self) -> int:
        return self.wq_e.shape[0]

    def head_columns(self, head: int | None) -> slice:
        if head is None:
            return slice(None)
        if not 0 <= head < self.num_heads:
            raise ShapeError(f"head {head} out of range for {self.num_heads} heads")
        return slice(head * self.head_size, (head + 1) * self.head_size)


@dataclass
class NodeUpdateWeights(ParamGroup):
    w1: Linear
    w2: Linear
    w3: Linear
    ln1: LayerNormParams
    ln2: LayerNormParams

    @classmethod
    def init(cls, rng, d_n: int, d_nh: int) -> "NodeUpdateWeights":
        return cls(Linear.init(rng, d_n, d_n), Linear.init(rng, d_n, d_nh),
                   Linear.init(rng, d_nh, d_n), LayerNormParams.init(d_n),
                   LayerNormParams.init(d_n))


def _edges_or_empty(nodes: Tensor, edges) -> Tensor:
    if edges is None:
        n = nodes.shape[-2]
        return Tensor(np.zeros(nodes.shape[:-2] + (n, n, 0)))
    return as_tensor(edges)


def _check_widths(nodes: Tensor, edges: Tensor, w: AttentionWeights):
    n = nodes.shape[-2]
    if nodes.shape[-1] != w.d_n:
        raise ShapeError(f"node width {nodes.shape[-1]} does not match weights ({w.d_n})")
    if edges.shape[-3:-1] != (n, n) or edges.shape[-1] != w.d_e:
        raise ShapeError(
            f"edge tensor {edges.shape} does not fit {n} nodes with edge width {w.d_e}")


def qkv_split(nodes, edges, w: AttentionWeights, head: int | None = None):
    """Per-pair Q, K, V of shape ``(..., N, N, d_h)`` (all heads if ``head`` is None).

    The node and edge projections are computed separately and summed, so the
    node term costs O(N) and only the edge term costs O(N^2).
    """
    nodes = as_tensor(nodes)
    edges = _edges_or_empty(nodes, edges)
    _check_widths(nodes, edges, w)
    cols = w.head_columns(head)
    nd = nodes.ndim

    def project(wn, we, b, node_axis):
        node_part = nodes @ wn[:, cols] + b[cols]
        node_part = ad.expand_dims(node_part, nd - 1 if node_axis == "row" else nd - 2)
        return node_part + edges @ we[:, cols]

    q = project(w.wq_n, w.wq_e, w.bq, "row")
    k = project(w.wk_n, w.wk_e, w.bk, "col")
    v = project(w.wv_n, w.wv_e, w.bv, "col")
    return q, k, v


def qkv_concat(nodes, edges, w: AttentionWeights, head: int | None = None):
    """Reference Q, K, V from ``[n, e_ij] @ [W_n; W_e]`` with explicit concatenation.

    Plain numpy and not differentiable; it exists to cross-check
    :func:`qkv_split`.
    """
    nodes = np.asarray(as_tensor(nodes).data)
    n = nodes.shape[-2]
    edges = _edges_or_empty(Tensor(nodes), edges).data
    _check_widths(Tensor(nodes), Tensor(edges), w)
    cols = w.head_columns(head)
    rows = np.broadcast_to(nodes[..., :, None, :], nodes.shape[:-2] + (n, n, nodes.shape[-1]))
    cols_nodes = np.broadcast_to(nodes[..., None, :, :], rows.shape)
    x_row = np.concatenate([rows, edges], axis=-1)
    x_col = np.concatenate([cols_nodes, edges], axis=-1)

    def stacked(wn, we, b):
        return np.concatenate([wn.data[:, cols], we.data[:, cols]], axis=0), b.data[cols]

    out = []
    for x, (mat, b) in ((x_row, stacked(w.wq_n, w.wq_e, w.bq)),
                        (x_col, stacked(w.wk_n, w.wk_e, w.bk)),
                        (x_col, stacked(w.wv_n, w.wv_e, w.bv))):
        out.append(x @ mat + b)
    return tuple(out)


def _key_mask(node_mask, shape):
    if node_mask is None:
        return None
    m = np.asarray(node_mask, dtype=bool)
    return np.broadcast_to(m[..., None, :, None], shape)


def attention_probs(q: Tensor, k: Tensor, num_heads: int, head_size: int, node_mask=None) -> Tensor:
    """Softmax over keys ``j`` of ``q_ij . k_ij / sqrt(d_h)``; shape ``(..., N, N, H)``."""
    lead = q.shape[:-1]
    qh = ad.reshape(q, lead + (num_heads, head_size))
    kh = ad.reshape(k, lead + (num_heads, head_size))
    scores = ad.scale(ad.sum_(qh * kh, axis=-1), 1.0 / math.sqrt(head_size))
    return ad.softmax(scores, axis=-2, mask=_key_mask(node_mask, scores.shape))


def attention_scores(q, k, head_size: int, node_mask=None) -> Tensor:
    """Single-head attention matrix ``(..., N, N)``; row ``i`` is a distribution over ``j``."""
    q, k = as_tensor(q), as_tensor(k)
    if q.shape != k.shape or q.ndim < 3 or q.shape[-3] != q.shape[-2]:
        raise ShapeError(f"attention_scores needs matching (..., N, N, d_h) inputs, got {q.shape}, {k.shape}")
    probs = attention_probs(q, k, 1, head_size, node_mask)
    return ad.reshape(probs, probs.shape[:-1])


class Expansion(NamedTuple):
    node_node: float
    node_edge: float
    edge_node: float
    edge_edge: float

    @property
    def total(self) -> float:
        return self.node_node + self.node_edge + self.edge_node + self.edge_edge


def dot_expand4(n_i, n_j, e_ij, w: AttentionWeights, head: int = 0) -> Expansion:
    """The pair dot product ``q_ij . k_ij`` split into its four addends.

    ``node_node`` alone is the plain transformer score; ``node_node +
    edge_node`` matches attention that adds edge terms to the query side only.
    Projection biases are folded into the node terms.
    """
    cols = w.head_columns(head)
    n_i, n_j, e_ij = (np.asarray(as_tensor(x).data) for x in (n_i, n_j, e_ij))
    qn = n_i @ w.wq_n.data[:, cols] + w.bq.data[cols]
    kn = n_j @ w.wk_n.data[:, cols] + w.bk.data[cols]
    qe = e_ij @ w.wq_e.data[:, cols]
    ke = e_ij @ w.wk_e.data[:, cols]
    return Expansion(float(qn @ kn), float(qn @ ke), float(qe @ kn), float(qe @ ke))


def node_update(m, nodes, nu: NodeUpdateWeights, dropout: float = 0.0, rng=None) -> Tensor:
    """Residual / LayerNorm update of node vectors from aggregated messages."""
    u = ad.layernorm(nu.w1(m) + nodes, nu.ln1.gain, nu.ln1.bias)
    hidden = ad.dropout(ad.relu(nu.w2(u)), dropout, rng)
    return ad.layernorm(nu.w3(hidden) + u, nu.ln2.gain, nu.ln2.bias)


def attend(nodes, edges, w: AttentionWeights, nu: NodeUpdateWeights,
           node_mask=None, dropout: float = 0.0, rng=None) -> Tensor:
    """One relational attention step followed by the node update.

    ``m_i = sum_j alpha_ij v_ij`` per head, heads are concatenated and
    projected back to ``d_n``, then fed to :func:`node_update`. Keys of
    nodes where ``node_mask`` is False are excluded from every softmax.
    """
    nodes = as_tensor(nodes)
    q, k, v = qkv_split(nodes, edges, w)
    probs = attention_probs(q, k, w.num_heads, w.head_size, node_mask)
    probs = ad.dropout(probs, dropout, rng)
    lead = v.shape[:-1]
    vh = ad.reshape(v, lead + (w.num_heads, w.head_size))
    m = ad.sum_(ad.expand_dims(probs, -1) * vh, axis=-3)
    m = ad.reshape(m, m.shape[:-2] + (w.num_heads * w.head_size,))
    return node_update(w.out(m), nodes, nu, dropout, rng)
