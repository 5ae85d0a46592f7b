"""Synthetic graph-reasoning tasks with exact brute-force targets.

* ``lobster``: hop distance between a marked source and destination in a
  random lobster tree (graph-level scalar).
* ``bfs_ptr``: BFS parent pointer of every node from a marked source.
* ``fw_step``: one min-plus relaxation step over random edge weights.

Every example is a pure function of its generator parameters and seed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, GeneratorError, MetricDomainError
from .graph import Graph, TaskExample
from .seeding import derive
from .seeding import rng as seeded_rng

UNREACHABLE = -1
MAX_ATTEMPTS = 100_000


@dataclass(frozen=True)
class LobsterSpec:
    n_min: int = 4
    n_max: int = 16
    p_leg: float = 0.5
    p_foot: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_min < self.n_max:
            raise GeneratorError(f"need 1 <= n_min < n_max, got [{self.n_min}, {self.n_max})")
        if not (0.0 <= self.p_leg <= 1.0 and 0.0 <= self.p_foot <= 1.0):
            raise GeneratorError("attachment probabilities must lie in [0, 1]")

    def with_seed(self, seed: int) -> "LobsterSpec":
        return LobsterSpec(self.n_min, self.n_max, self.p_leg, self.p_foot, seed)


def lobster_tree(spec: LobsterSpec) -> tuple[int, list]:
    """Sample a lobster tree; returns ``(n, undirected edge list)`` with shuffled labels.

    A spine path of length ``s`` in ``[2, n_max // 2]`` gets one leg per spine
    node with probability ``p_leg`` and one foot per leg with probability
    ``p_foot``; samples outside ``[n_min, n_max)`` are rejected.
    """
    if spec.n_max <= 4:
        raise GeneratorError(f"n_max={spec.n_max} cannot host a spine plus endpoints")
    s_hi = spec.n_max // 2
    if 3 * s_hi < spec.n_min:
        raise GeneratorError(f"no spine length in [2, {s_hi}] reaches {spec.n_min} nodes")
    r = seeded_rng(spec.seed, "lobster")
    for _ in range(MAX_ATTEMPTS):
        s = int(r.integers(2, s_hi + 1))
        edges = [(k, k + 1) for k in range(s - 1)]
        n = s
        for k in range(s):
            if r.random() < spec.p_leg:
                leg = n
                edges.append((k, leg))
                n += 1
                if r.random() < spec.p_foot:
                    edges.append((leg, n))
                    n += 1
        if spec.n_min <= n < spec.n_max:
            labels = r.permutation(n)
            return n, [(int(labels[a]), int(labels[b])) for a, b in edges]
    raise GeneratorError(f"no lobster in [{spec.n_min}, {spec.n_max}) after {MAX_ATTEMPTS} tries")


def _presence(n: int, edges) -> np.ndarray:
    adj = np.zeros((n, n, 1))
    for a, b in edges:
        adj[a, b, 0] = adj[b, a, 0] = 1.0
    return adj


def adjacency(g: Graph) -> np.ndarray:
    """Boolean ``A[i, j]``: an edge points from ``j`` to ``i`` (presence flag, channel 0)."""
    return g.edge_feats[..., 0] != 0


def bfs_oracle(g: Graph, source: int):
    """Hop distances and BFS parents from ``source``; ``parent[source] = source``.

    Unreachable nodes get distance and parent ``UNREACHABLE``.
    """
    adj = adjacency(g)
    n = g.num_nodes
    dist = np.full(n, UNREACHABLE, dtype=np.int64)
    parent = np.full(n, UNREACHABLE, dtype=np.int64)
    dist[source] = 0
    parent[source] = source
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(adj[:, u]):
            if dist[v] == UNREACHABLE:
                dist[v] = dist[u] + 1
                parent[v] = u
                queue.append(v)
    return dist, parent


def gen_lobster(spec: LobsterSpec) -> TaskExample:
    """Shortest-path distance between a marked source and destination."""
    n, edges = lobster_tree(spec)
    r = seeded_rng(spec.seed, "endpoints")
    src, dst = (int(x) for x in r.choice(n, size=2, replace=False))
    nodes = np.zeros((n, 3))
    nodes[:, 2] = 1.0
    nodes[src] = (1.0, 0.0, 0.0)
    nodes[dst] = (0.0, 1.0, 0.0)
    g = Graph(nodes, _presence(n, edges))
    dist, _ = bfs_oracle(g, src)
    meta = {"generator": "lobster", **asdict(spec), "source": src, "destination": dst}
    return TaskExample(g, "graph_scalar", float(dist[dst]), meta)


def gen_bfs_pointers(spec: LobsterSpec) -> TaskExample:
    """BFS parent pointers from a marked source on a lobster tree."""
    n, edges = lobster_tree(spec)
    src = int(seeded_rng(spec.seed, "source").integers(n))
    nodes = np.zeros((n, 2))
    nodes[:, 1] = 1.0
    nodes[src] = (1.0, 0.0)
    g = Graph(nodes, _presence(n, edges))
    _, parent = bfs_oracle(g, src)
    meta = {"generator": "bfs_ptr", **asdict(spec), "source": src}
    return TaskExample(g, "node_pointer", parent, meta)


def min_plus_step(w: np.ndarray) -> np.ndarray:
    """``T_ij = min_k (w_ik + w_kj)``."""
    return (w[:, :, None] + w[None, :, :]).min(axis=1)


def gen_fw_step(n: int, seed: int) -> TaskExample:
    """One Floyd-Warshall style relaxation over Uniform(0, 1) weights, zero diagonal."""
    if n < 1:
        raise GeneratorError("fw_step needs n >= 1")
    w = seeded_rng(seed, "fw_step").uniform(0.0, 1.0, size=(n, n))
    np.fill_diagonal(w, 0.0)
    g = Graph(np.ones((n, 1)), w[:, :, None])
    return TaskExample(g, "edge_scalar", min_plus_step(w), {"generator": "fw_step", "n": n, "seed": seed})


def relative_loss(y: float, yhat: float) -> float:
    if y == 0:
        raise MetricDomainError("relative loss is undefined for a zero label")
    return abs(y - yhat) / abs(y)


def pointer_score(pred, target) -> float:
    """Fraction of nodes whose pointer is correct (micro-F1 for single-label pointers)."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ContractError(f"pointer shapes differ: {pred.shape} vs {target.shape}")
    return float((pred == target).mean())


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class TaskInfo:
    name: str
    target_kind: str
    node_in: int
    edge_in: int
    metric: str
    higher_is_better: bool


TASKS = {
    "lobster": TaskInfo("lobster", "graph_scalar", 3, 1, "relative_loss", False),
    "bfs_ptr": TaskInfo("bfs_ptr", "node_pointer", 2, 1, "pointer_accuracy", True),
    "fw_step": TaskInfo("fw_step", "edge_scalar", 1, 1, "mse", False),
}


def task_info(task: str) -> TaskInfo:
    try:
        return TASKS[task]
    except KeyError:
        raise GeneratorError(f"unknown task {task!r}; choose from {sorted(TASKS)}") from None


def generate(task: str, count: int, seed: int, n_min: int, n_max: int,
             p_leg: float = 0.5, p_foot: float = 0.5) -> list:
    """``count`` examples with per-example seeds ``derive(seed, task, index)``.

    Sizes are drawn from ``[n_min, n_max)``; for ``fw_step`` the size is
    sampled uniformly from that range.
    """
    task_info(task)
    out = []
    for i in range(count):
        s = derive(seed, task, i)
        if task == "fw_step":
            n = int(seeded_rng(s, "size").integers(n_min, n_max))
            out.append(gen_fw_step(n, s))
        else:
            spec = LobsterSpec(n_min, n_max, p_leg, p_foot, s)
            out.append(gen_lobster(spec) if task == "lobster" else gen_bfs_pointers(spec))
    return out
