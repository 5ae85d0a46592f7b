"""Dense attributed graphs, task examples, and their binary file formats.

Edge ``(i, j)`` is the directed edge pointing from node ``j`` to node ``i``
and lives at ``edge_feats[i, j]``. Storage is dense over every ordered pair,
self-pairs included; a missing edge is expressed in the features (e.g. a zero
presence flag), never by missing storage.

Graph file layout (little-endian)::

    b"RTG1" | u32 N | u32 d_n | u32 d_e | u32 d_g (0 = no global)
    | f64[N*d_n] node_feats | f64[N*N*d_e] edge_feats | f64[d_g] global

Dataset file layout: ``u32 count`` then ``count`` records of
``graph | u8 target_kind | payload`` where the payload is one f64 for
``graph_scalar``, ``N`` i64 for ``node_pointer`` and ``N*N`` f64 for
``edge_scalar``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, GraphValidationError

MAGIC = b"RTG1"
_HEADER = struct.Struct("<4sIIII")

TARGET_KINDS = ("graph_scalar", "node_pointer", "edge_scalar")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    node_feats: np.ndarray
    edge_feats: np.ndarray
    global_feat: np.ndarray | None = None
    # trailing nodes that were appended to carry the global vector
    num_core: int = 0

    def __post_init__(self):
        object.__setattr__(self, "node_feats", _frozen(self.node_feats))
        object.__setattr__(self, "edge_feats", _frozen(self.edge_feats))
        if self.global_feat is not None:
            object.__setattr__(self, "global_feat", _frozen(self.global_feat))

    @property
    def num_nodes(self) -> int:
        return self.node_feats.shape[0]

    @property
    def num_real_nodes(self) -> int:
        return self.num_nodes - self.num_core

    @property
    def d_n(self) -> int:
        return self.node_feats.shape[1]

    @property
    def d_e(self) -> int:
        return self.edge_feats.shape[-1]

    @property
    def d_g(self) -> int:
        return 0 if self.global_feat is None else self.global_feat.shape[0]

    def equals(self, other: "Graph") -> bool:
        """Bit-exact equality of structure and features."""
        if (self.global_feat is None) != (other.global_feat is None):
            return False
        same = (self.node_feats.shape == other.node_feats.shape
                and self.edge_feats.shape == other.edge_feats.shape
                and self.node_feats.tobytes() == other.node_feats.tobytes()
                and self.edge_feats.tobytes() == other.edge_feats.tobytes()
                and self.num_core == other.num_core)
        if same and self.global_feat is not None:
            same = self.global_feat.tobytes() == other.global_feat.tobytes()
        return same


@dataclass(frozen=True, eq=False)
class TaskExample:
    input: Graph
    target_kind: str
    target: object
    meta: dict = field(default_factory=dict)


def validate(g: Graph) -> None:
    """Raise :class:`GraphValidationError` naming the first broken invariant."""
    if g.node_feats.ndim != 2:
        raise GraphValidationError(f"shape: node_feats must be N x d_n, got {g.node_feats.shape}")
    n = g.num_nodes
    if n < 1:
        raise GraphValidationError("shape: graph needs at least one node")
    if g.edge_feats.ndim != 3 or g.edge_feats.shape[:2] != (n, n):
        raise GraphValidationError(
            f"shape: edge_feats must be {n} x {n} x d_e, got {g.edge_feats.shape}")
    if g.global_feat is not None and g.global_feat.ndim != 1:
        raise GraphValidationError(f"shape: global_feat must be a vector, got {g.global_feat.shape}")
    if not 0 <= g.num_core < n:
        raise GraphValidationError(f"shape: num_core {g.num_core} out of range for {n} nodes")
    for name in ("node_feats", "edge_feats", "global_feat"):
        a = getattr(g, name)
        if a is not None and not np.isfinite(a).all():
            raise GraphValidationError(f"finiteness: {name} holds non-finite values")


def validate_example(ex: TaskExample) -> None:
    validate(ex.input)
    n = ex.input.num_real_nodes
    if ex.target_kind not in TARGET_KINDS:
        raise GraphValidationError(f"unknown target kind {ex.target_kind!r}")
    if ex.target_kind == "node_pointer":
        t = np.asarray(ex.target)
        if t.shape != (n,) or (t < 0).any() or (t >= n).any():
            raise GraphValidationError("node_pointer target must hold N indices in [0, N)")
    elif ex.target_kind == "edge_scalar":
        if np.shape(ex.target) != (n, n):
            raise GraphValidationError("edge_scalar target must be N x N")


def _check_perm(pi, n) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (n,) or not np.array_equal(np.sort(pi), np.arange(n)):
        raise GraphValidationError(f"permutation of [0, {n}) expected, got {pi.tolist()}")
    return pi


def permute(g: Graph, pi) -> Graph:
    """Relabel node ``i`` as ``pi[i]``; edge ``(i, j)`` moves to ``(pi[i], pi[j])``."""
    pi = _check_perm(pi, g.num_nodes)
    inv = np.argsort(pi)
    return Graph(g.node_feats[inv], g.edge_feats[inv][:, inv], g.global_feat, g.num_core)


def permute_nodes(x: np.ndarray, pi, axes=(0,)) -> np.ndarray:
    """Apply the node relabelling ``pi`` to the given axes of an array."""
    inv = np.argsort(np.asarray(pi))
    for ax in axes:
        x = np.take(x, inv, axis=ax)
    return x


# ---------------------------------------------------------------------------
# binary formats


def serialize(g: Graph) -> bytes:
    glob = g.global_feat if g.global_feat is not None else np.zeros(0)
    return b"".join([
        _HEADER.pack(MAGIC, g.num_nodes, g.d_n, g.d_e, g.d_g),
        g.node_feats.astype("<f8").tobytes(),
        g.edge_feats.astype("<f8").tobytes(),
        glob.astype("<f8").tobytes(),
    ])


def _read_floats(buf, offset, count, what):
    end = offset + 8 * count
    if end > len(buf):
        raise FormatError(f"truncated {what}: need {end} bytes, have {len(buf)}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64), end


def _read_graph(buf, offset=0):
    if len(buf) - offset < _HEADER.size:
        raise FormatError("truncated graph header")
    magic, n, dn, de, dg = _HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if n < 1:
        raise FormatError("graph header declares zero nodes")
    pos = offset + _HEADER.size
    nodes, pos = _read_floats(buf, pos, n * dn, "node block")
    edges, pos = _read_floats(buf, pos, n * n * de, "edge block")
    glob = None
    if dg:
        glob, pos = _read_floats(buf, pos, dg, "global block")
    return Graph(nodes.reshape(n, dn), edges.reshape(n, n, de), glob), pos


def deserialize(buf: bytes) -> Graph:
    g, end = _read_graph(memoryview(buf).tobytes())
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after graph")
    return g


def serialize_dataset(examples) -> bytes:
    parts = [struct.pack("<I", len(examples))]
    for ex in examples:
        parts.append(serialize(ex.input))
        parts.append(struct.pack("<B", TARGET_KINDS.index(ex.target_kind)))
        if ex.target_kind == "graph_scalar":
            parts.append(struct.pack("<d", float(ex.target)))
        elif ex.target_kind == "node_pointer":
            parts.append(np.asarray(ex.target, dtype="<i8").tobytes())
        else:
            parts.append(np.asarray(ex.target, dtype="<f8").tobytes())
    return b"".join(parts)


def deserialize_dataset(buf: bytes) -> list:
    buf = memoryview(buf).tobytes()
    if len(buf) < 4:
        raise FormatError("truncated dataset header")
    (count,) = struct.unpack_from("<I", buf, 0)
    pos = 4
    out = []
    for _ in range(count):
        g, pos = _read_graph(buf, pos)
        if pos + 1 > len(buf):
            raise FormatError("truncated target kind")
        kind_id = buf[pos]
        pos += 1
        if kind_id >= len(TARGET_KINDS):
            raise FormatError(f"unknown target kind id {kind_id}")
        kind = TARGET_KINDS[kind_id]
        n = g.num_nodes
        if kind == "graph_scalar":
            t, pos = _read_floats(buf, pos, 1, "scalar target")
            target = float(t[0])
        elif kind == "node_pointer":
            end = pos + 8 * n
            if end > len(buf):
                raise FormatError("truncated pointer target")
            target = np.frombuffer(buf, dtype="<i8", count=n, offset=pos).astype(np.int64)
            pos = end
        else:
            t, pos = _read_floats(buf, pos, n * n, "edge target")
            target = t.reshape(n, n)
        out.append(TaskExample(g, kind, target))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after dataset")
    return out


def save_dataset(path, examples) -> None:
    Path(path).write_bytes(serialize_dataset(examples))


def load_dataset(path) -> list:
    return deserialize_dataset(Path(path).read_bytes())
