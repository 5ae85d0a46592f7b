"""Independent oracles shared by the test modules."""

from collections import deque

import numpy as np

# filled by the acceptance suite, printed in the pytest terminal summary
CRITERIA_LINES = []


def central_difference(f, arrays, h=1e-5):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. each array (mutated in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = f()
            flat[k] = orig - h
            down = f()
            flat[k] = orig
            gflat[k] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def triple_loop_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def floyd_warshall(adj):
    """All-pairs hop distances from a boolean adjacency matrix."""
    n = adj.shape[0]
    d = np.full((n, n), np.inf)
    d[adj] = 1.0
    np.fill_diagonal(d, 0.0)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i, k] + d[k, j] < d[i, j]:
                    d[i, j] = d[i, k] + d[k, j]
    return d


def min_plus_brute(w):
    n = w.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = min(w[i, k] + w[k, j] for k in range(n))
    return out


def peel_leaves(adj):
    """Remove every degree-1 node from an undirected graph once."""
    deg = adj.sum(axis=1)
    keep = deg > 1
    if keep.sum() <= 1:
        # a bare edge or single node peels down to a (trivial) path
        return adj[np.ix_(keep, keep)] if keep.any() else np.zeros((0, 0), bool)
    return adj[np.ix_(keep, keep)]


def is_path(adj):
    n = adj.shape[0]
    if n <= 1:
        return True
    deg = adj.sum(axis=1)
    if adj.sum() // 2 != n - 1 or deg.max() > 2:
        return False
    return is_connected(adj)


def is_connected(adj):
    n = adj.shape[0]
    seen = {0}
    q = deque([0])
    while q:
        u = q.popleft()
        for v in np.flatnonzero(adj[u]):
            if v not in seen:
                seen.add(int(v))
                q.append(int(v))
    return len(seen) == n


def brute_argmax(logits):
    """Row-wise argmax with explicit lowest-index tie-break."""
    n_rows, n_cols = logits.shape
    out = np.zeros(n_rows, dtype=np.int64)
    for i in range(n_rows):
        best = 0
        for j in range(1, n_cols):
            if logits[i, j] > logits[i, best]:
                best = j
        out[i] = best
    return out
