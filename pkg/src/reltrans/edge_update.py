"""Per-layer edge-vector update.

Each edge ``e_ij`` is recomputed from its locale only: itself, the reverse
edge ``e_ji`` and the already-updated endpoint nodes ``n'_i`` and ``n'_j``::

    m_ij = ReLU([e_ij, e_ji, n'_i, n'_j] W_4)
    u_ij = LayerNorm(m_ij W_5 + e_ij)
    e'_ij = LayerNorm(ReLU(u_ij W_6) W_7 + u_ij)

Every pair reads the pre-update edge tensor, so the update is synchronous
and costs Theta(N^2) evaluations of a constant-size function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import as_tensor
from .errors import ShapeError
from .params import LayerNormParams, Linear, ParamGroup


@dataclass
class EdgeUpdateWeights(ParamGroup):
    w4: Linear  # (2 d_e + 2 d_n) x d_eh1, rows ordered e_ij, e_ji, n_i, n_j
    w5: Linear
    w6: Linear
    w7: Linear
    ln1: LayerNormParams
    ln2: LayerNormParams

    @classmethod
    def init(cls, rng, d_n: int, d_e: int, d_eh1: int, d_eh2: int) -> "EdgeUpdateWeights":
        return cls(Linear.init(rng, 2 * d_e + 2 * d_n, d_eh1), Linear.init(rng, d_eh1, d_e),
                   Linear.init(rng, d_e, d_eh2), Linear.init(rng, d_eh2, d_e),
                   LayerNormParams.init(d_e), LayerNormParams.init(d_e))

    @property
    def d_e(self) -> int:
        return self.w5.weight.shape[1]

    @property
    def d_n(self) -> int:
        return (self.w4.weight.shape[0] - 2 * self.d_e) // 2


def edge_message(e_ij, e_ji, n_i, n_j, w: EdgeUpdateWeights):
    """Message for a single pair from the explicit four-way concatenation."""
    x = ad.concat([as_tensor(e_ij), as_tensor(e_ji), as_tensor(n_i), as_tensor(n_j)], axis=-1)
    if x.shape[-1] != w.w4.weight.shape[0]:
        raise ShapeError(f"locale width {x.shape[-1]} does not match W_4 {w.w4.weight.shape}")
    return ad.relu(w.w4(x))


def edge_messages(edges, nodes, w: EdgeUpdateWeights):
    """All-pairs messages ``(..., N, N, d_eh1)``.

    W_4 is applied blockwise (one block per locale member) instead of
    materialising the ``(N, N, 2 d_e + 2 d_n)`` concatenation; the node
    blocks are projected once per node and broadcast.
    """
    edges, nodes = as_tensor(edges), as_tensor(nodes)
    d_e, d_n = w.d_e, w.d_n
    if edges.shape[-1] != d_e or nodes.shape[-1] != d_n:
        raise ShapeError(
            f"edge width {edges.shape[-1]} / node width {nodes.shape[-1]} do not match "
            f"weights ({d_e}, {d_n})")
    n = nodes.shape[-2]
    if edges.shape[-3:-1] != (n, n):
        raise ShapeError(f"edge tensor {edges.shape} does not fit {n} nodes")
    W = w.w4.weight
    reverse = ad.swapaxes(edges, -3, -2)
    pre = edges @ W[:d_e] + reverse @ W[d_e:2 * d_e]
    from_i = nodes @ W[2 * d_e:2 * d_e + d_n] + w.w4.bias
    from_j = nodes @ W[2 * d_e + d_n:]
    nd = nodes.ndim
    pre = pre + ad.expand_dims(from_i, nd - 1) + ad.expand_dims(from_j, nd - 2)
    return ad.relu(pre)


def edge_update(edges, nodes, w: EdgeUpdateWeights, dropout: float = 0.0, rng=None):
    """Updated edge tensor given this layer's updated node matrix ``nodes``."""
    edges = as_tensor(edges)
    m = edge_messages(edges, nodes, w)
    u = ad.layernorm(w.w5(m) + edges, w.ln1.gain, w.ln1.bias)
    hidden = ad.dropout(ad.relu(w.w6(u)), dropout, rng)
    return ad.layernorm(w.w7(hidden) + u, w.ln2.gain, w.ln2.bias)


def edge_update_reference(edges: np.ndarray, nodes: np.ndarray, w: EdgeUpdateWeights) -> np.ndarray:
    """Pair-by-pair loop over :func:`edge_message`; slow, for cross-checking."""
    edges, nodes = np.asarray(edges), np.asarray(nodes)
    n = nodes.shape[0]
    out = np.empty_like(edges)
    with ad.no_grad():
        for i in range(n):
            for j in range(n):
                m = edge_message(edges[i, j], edges[j, i], nodes[i], nodes[j], w)
                u = ad.layernorm(w.w5(m) + edges[i, j], w.ln1.gain, w.ln1.bias)
                h = ad.relu(w.w6(u))
                out[i, j] = ad.layernorm(w.w7(h) + u, w.ln2.gain, w.ln2.bias).data
    return out
