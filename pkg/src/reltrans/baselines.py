"""Baseline processors: Deep Sets, MPNN with max pooling, and the edge-free transformer.

The GNN baselines leave edge vectors untouched between layers and share one
node update, ``n' = n + ReLU([n, m] W_u + b_u)``, so they differ only in how
the message ``m`` is gathered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttentionWeights, NodeUpdateWeights, attend
from .autodiff import as_tensor
from .params import Linear, ParamGroup

VARIANTS = ("deepsets", "mpnn", "vanilla_transformer")


@dataclass
class GNNLayerWeights(ParamGroup):
    message: Linear  # (d_e + 2 d_n) x d_n, rows ordered e_ij, n_i, n_j
    update: Linear  # 2 d_n x d_n

    @classmethod
    def init(cls, rng, d_n: int, d_e: int) -> "GNNLayerWeights":
        return cls(Linear.init(rng, d_e + 2 * d_n, d_n), Linear.init(rng, 2 * d_n, d_n))


def _phi_n(nodes, m, w: GNNLayerWeights):
    return nodes + ad.relu(w.update(ad.concat([nodes, m], axis=-1)))


def deepsets_layer(nodes, edges, w: GNNLayerWeights):
    """Each node sees only its own self-edge: ``m_i = psi(e_ii, n_i, n_i)``."""
    nodes, edges = as_tensor(nodes), as_tensor(edges)
    n = nodes.shape[-2]
    idx = np.arange(n)
    self_edges = ad.getitem(edges, (Ellipsis, idx, idx, slice(None)))
    m = ad.relu(w.message(ad.concat([self_edges, nodes, nodes], axis=-1)))
    return _phi_n(nodes, m, w)


def mpnn_layer(nodes, edges, w: GNNLayerWeights, node_mask=None):
    """Fully connected message passing with elementwise max over senders ``j``."""
    nodes, edges = as_tensor(nodes), as_tensor(edges)
    d_e, d_n = edges.shape[-1], nodes.shape[-1]
    W = w.message.weight
    nd = nodes.ndim
    pre = edges @ W[:d_e]
    pre = pre + ad.expand_dims(nodes @ W[d_e:d_e + d_n] + w.message.bias, nd - 1)
    pre = pre + ad.expand_dims(nodes @ W[d_e + d_n:], nd - 2)
    msgs = ad.relu(pre)
    if node_mask is not None:
        keep = np.asarray(node_mask, dtype=bool)[..., None, :, None]
        msgs = msgs + np.where(keep, 0.0, -np.inf)
    return _phi_n(nodes, ad.max_over_axis(msgs, axis=-2), w)


def vanilla_transformer_layer(nodes, attn: AttentionWeights, nu: NodeUpdateWeights,
                              node_mask=None, dropout: float = 0.0, rng=None):
    """Standard transformer layer: relational attention with a zero-width edge tensor."""
    return attend(nodes, None, attn, nu, node_mask, dropout, rng)
