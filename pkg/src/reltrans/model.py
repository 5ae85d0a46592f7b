"""Stacked graph processors with input encoders and task decoders.

``GraphModel`` wraps one :class:`ModelConfig` and its parameters. The
relational transformer variant runs, per layer, relational attention (node
update) and then the edge update, so edges always see this layer's node
vectors. The ``transformer`` variant drops the edge path entirely; the
``deepsets`` and ``mpnn`` variants use the GNN layers from
:mod:`reltrans.baselines` and keep edges fixed.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import AttentionWeights, NodeUpdateWeights, attend
from .autodiff import Tensor, as_tensor
from .baselines import GNNLayerWeights, deepsets_layer, mpnn_layer
from .edge_update import EdgeUpdateWeights, edge_update
from .errors import ContractError, FormatError, ShapeError
from .graph import TARGET_KINDS, Graph, validate
from .params import Linear, ParamGroup
from .seeding import rng as seeded_rng

MODEL_VARIANTS = ("rt", "transformer", "deepsets", "mpnn")
GLOBAL_MODES = ("cat", "core")
CHECKPOINT_MAGIC = b"RTM1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "rt"
    target_kind: str = "graph_scalar"
    node_in: int = 3
    edge_in: int = 1
    global_in: int = 0
    # lobster-task widths; d_n doubles as the output layer size
    d_n: int = 180
    d_e: int = 128
    num_layers: int = 8
    num_heads: int = 8
    head_size: int = 28
    d_nh: int = 12
    d_eh1: int = 32
    d_eh2: int = 8
    d_p: int = 16
    edge_updates: bool = True
    global_mode: str = "cat"
    ptr_from_edges: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.variant not in MODEL_VARIANTS:
            raise ContractError(f"unknown model variant {self.variant!r}")
        if self.target_kind not in TARGET_KINDS:
            raise ContractError(f"unknown target kind {self.target_kind!r}")
        if self.global_mode not in GLOBAL_MODES:
            raise ContractError(f"unknown global mode {self.global_mode!r}")
        if self.num_layers < 0:
            raise ContractError("num_layers must be >= 0")

    @property
    def has_edges(self) -> bool:
        return self.variant != "transformer" and self.d_e > 0

    @property
    def encoded_node_in(self) -> int:
        if not self.global_in:
            return self.node_in
        if self.global_mode == "cat":
            return self.node_in + self.global_in
        return max(self.node_in, self.global_in)

    @property
    def decodes_from_edges(self) -> bool:
        if self.target_kind == "node_pointer":
            return self.ptr_from_edges and self.has_edges
        return self.target_kind == "edge_scalar" and self.has_edges

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def apply_global(g: Graph, mode: str) -> Graph:
    """Fold the global vector into the node set.

    ``cat`` appends it to every node vector. ``core`` appends one extra node
    carrying it; node widths are zero-padded to ``max(d_n, d_g)`` and the
    edges to and from the core node are all-zero (absent).
    """
    if mode not in GLOBAL_MODES:
        raise ContractError(f"unknown global mode {mode!r}")
    if g.global_feat is None:
        return g
    n, glob = g.num_nodes, g.global_feat
    if mode == "cat":
        nodes = np.concatenate([g.node_feats, np.broadcast_to(glob, (n, glob.shape[0]))], axis=1)
        return Graph(nodes, g.edge_feats, None, g.num_core)
    width = max(g.d_n, g.d_g)
    nodes = np.zeros((n + 1, width))
    nodes[:n, :g.d_n] = g.node_feats
    nodes[n, :g.d_g] = glob
    edges = np.zeros((n + 1, n + 1, g.d_e))
    edges[:n, :n] = g.edge_feats
    return Graph(nodes, edges, None, g.num_core + 1)


@dataclass
class RTLayer(ParamGroup):
    attn: AttentionWeights
    node: NodeUpdateWeights
    edge: EdgeUpdateWeights | None = None


@dataclass
class Decoder(ParamGroup):
    """Output head; which fields are set depends on the target kind."""

    scalar: Linear | None = None  # graph scalar, or d_e -> 1 per pair
    src: Linear | None = None  # node-pair heads, logit_ij = <src(n_i), dst(n_j)>
    dst: Linear | None = None


@dataclass
class ModelParams(ParamGroup):
    node_enc: Linear
    edge_enc: Linear | None
    layers: list
    decoder: Decoder


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    r = seeded_rng(seed, "init", cfg.variant)
    d_e = cfg.d_e if cfg.has_edges else 0
    node_enc = Linear.init(r, cfg.encoded_node_in, cfg.d_n)
    edge_enc = Linear.init(r, cfg.edge_in, d_e) if d_e else None
    layers = []
    for _ in range(cfg.num_layers):
        if cfg.variant in ("rt", "transformer"):
            attn = AttentionWeights.init(r, cfg.d_n, d_e, cfg.num_heads, cfg.head_size)
            node = NodeUpdateWeights.init(r, cfg.d_n, cfg.d_nh)
            edge = None
            if cfg.variant == "rt" and cfg.edge_updates and d_e:
                edge = EdgeUpdateWeights.init(r, cfg.d_n, d_e, cfg.d_eh1, cfg.d_eh2)
            layers.append(RTLayer(attn, node, edge))
        else:
            layers.append(GNNLayerWeights.init(r, cfg.d_n, d_e))
    if cfg.target_kind == "graph_scalar":
        decoder = Decoder(scalar=Linear.init(r, cfg.d_n, 1))
    elif cfg.decodes_from_edges:
        decoder = Decoder(scalar=Linear.init(r, d_e, 1))
    else:
        decoder = Decoder(src=Linear.init(r, cfg.d_n, cfg.d_p), dst=Linear.init(r, cfg.d_n, cfg.d_p))
    return ModelParams(node_enc, edge_enc, layers, decoder)


@dataclass
class Batch:
    """Same-size graphs stacked on a leading axis."""

    nodes: np.ndarray  # (B, N, node_in)
    edges: np.ndarray  # (B, N, N, edge_in)
    num_real: int

    @property
    def size(self) -> int:
        return self.nodes.shape[0]


def collate(graphs, mode: str = "cat") -> Batch:
    prepared = [apply_global(g, mode) for g in graphs]
    sizes = {(g.num_nodes, g.num_core) for g in prepared}
    if len(sizes) != 1:
        raise ShapeError(f"collate needs equal-size graphs, got {sorted(sizes)}")
    n, core = sizes.pop()
    return Batch(np.stack([g.node_feats for g in prepared]),
                 np.stack([g.edge_feats for g in prepared]), n - core)


class GraphModel:
    def __init__(self, config: ModelConfig, params: ModelParams):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "GraphModel":
        return cls(config, init_params(config, seed))

    def named_parameters(self):
        return self.params.named_parameters()

    def parameters(self):
        return self.params.parameters()

    def num_parameters(self) -> int:
        return self.params.num_parameters()

    # -- processing -------------------------------------------------------

    def encode(self, nodes, edges):
        p = self.params
        nodes = p.node_enc(as_tensor(nodes))
        edges = p.edge_enc(as_tensor(edges)) if p.edge_enc is not None else None
        return nodes, edges

    def process(self, nodes, edges, node_mask=None, rng=None):
        cfg = self.config
        for layer in self.params.layers:
            if isinstance(layer, RTLayer):
                nodes = attend(nodes, edges, layer.attn, layer.node, node_mask, cfg.dropout, rng)
                if layer.edge is not None:
                    edges = edge_update(edges, nodes, layer.edge, cfg.dropout, rng)
            elif cfg.variant == "deepsets":
                nodes = deepsets_layer(nodes, edges, layer)
            else:
                nodes = mpnn_layer(nodes, edges, layer, node_mask)
        return nodes, edges

    def forward(self, nodes, edges, node_mask=None, rng=None):
        """Encode raw features and run every layer; returns ``(nodes, edges)``.

        ``edges`` is None for the edge-free transformer.
        """
        nodes, edges = self.encode(nodes, edges)
        if self.config.variant in ("deepsets", "mpnn") and edges is None:
            n = nodes.shape[-2]
            edges = Tensor(np.zeros(nodes.shape[:-2] + (n, n, 0)))
        return self.process(nodes, edges, node_mask, rng)

    def forward_graph(self, g: Graph):
        """Unbatched forward of one raw graph (global vector applied per config)."""
        validate(g)
        g = apply_global(g, self.config.global_mode)
        return self.forward(g.node_feats, g.edge_feats)

    # -- decoding ---------------------------------------------------------

    def decode(self, nodes: Tensor, edges, num_real: int) -> Tensor:
        """Raw model outputs for the configured target kind.

        ``graph_scalar`` -> ``(..., )``; ``node_pointer`` -> pointer logits
        ``(..., n, n)``; ``edge_scalar`` -> values ``(..., n, n)``. Trailing
        core nodes beyond ``num_real`` are dropped first.
        """
        cfg, dec = self.config, self.params.decoder
        n = nodes.shape[-2]
        if num_real != n:
            nodes = nodes[..., :num_real, :]
            if edges is not None:
                edges = edges[..., :num_real, :num_real, :]
        if cfg.target_kind == "graph_scalar":
            return decode_graph_scalar(nodes, dec.scalar)
        if cfg.decodes_from_edges:
            return decode_edge_scalar(edges, dec.scalar)
        return pair_logits(nodes, dec.src, dec.dst)

    def predict_batch(self, batch: Batch, rng=None) -> Tensor:
        nodes, edges = self.forward(batch.nodes, batch.edges, rng=rng)
        return self.decode(nodes, edges, batch.num_real)

    # -- checkpoints ------------------------------------------------------

    def to_bytes(self) -> bytes:
        return save_checkpoint(self)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "GraphModel":
        return load_checkpoint(buf)


def decode_graph_scalar(nodes, head: Linear) -> Tensor:
    """Mean over node vectors, then a linear map to one scalar per graph."""
    pooled = ad.mean(as_tensor(nodes), axis=-2)
    out = head(pooled)
    return ad.reshape(out, out.shape[:-1])


def decode_edge_scalar(edges, head: Linear) -> Tensor:
    """Linear map ``d_e -> 1`` applied to every pair."""
    out = head(as_tensor(edges))
    return ad.reshape(out, out.shape[:-1])


def pair_logits(nodes, src: Linear, dst: Linear) -> Tensor:
    nodes = as_tensor(nodes)
    return src(nodes) @ ad.swapaxes(dst(nodes), -1, -2)


def argmax_pointers(logits) -> np.ndarray:
    """Row-wise argmax over ``j``; numpy's first-index rule breaks ties."""
    return np.argmax(as_tensor(logits).data, axis=-1)


def decode_pointers_from_edges(edges, head: Linear) -> np.ndarray:
    return argmax_pointers(decode_edge_scalar(edges, head))


def decode_pointers_from_nodes(nodes, src: Linear, dst: Linear) -> np.ndarray:
    return argmax_pointers(pair_logits(nodes, src, dst))


# ---------------------------------------------------------------------------
# checkpoint container
#
# b"RTM1" | u32 version | u32 len | config JSON | u32 count
# | count x (u32 rank | u32 extents[rank] | f64 data)


def save_checkpoint(model: GraphModel) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    params = model.parameters()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(cfg)), cfg,
             struct.pack("<I", len(params))]
    for t in params:
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(t.data.astype("<f8").tobytes())
    return b"".join(parts)


def load_checkpoint(buf: bytes) -> GraphModel:
    buf = bytes(buf)
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:4]!r}")
    try:
        version, n = struct.unpack_from("<II", buf, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 12
        config = ModelConfig(**json.loads(buf[pos:pos + n].decode("utf-8")))
        pos += n
        model = GraphModel.init(config, 0)
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        params = model.parameters()
        if count != len(params):
            raise FormatError(f"checkpoint holds {count} tensors, config expects {len(params)}")
        for t in params:
            (rank,) = struct.unpack_from("<I", buf, pos)
            shape = struct.unpack_from(f"<{rank}I", buf, pos + 4)
            pos += 4 + 4 * rank
            if tuple(shape) != t.shape:
                raise FormatError(f"tensor shape {shape} does not match expected {t.shape}")
            size = int(np.prod(shape))
            if pos + 8 * size > len(buf):
                raise FormatError("truncated checkpoint tensor")
            t.data = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(shape)
            pos += 8 * size
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from None
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes in checkpoint")
    return model


def load_parameters(model: GraphModel, arrays) -> None:
    """Overwrite parameter values in declaration order."""
    for t, a in zip(model.parameters(), arrays, strict=True):
        t.data = np.array(a, dtype=np.float64)


def snapshot(model: GraphModel) -> list:
    return [t.data.copy() for t in model.parameters()]
