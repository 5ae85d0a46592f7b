"""Property verification, ablation runs and the scaling benchmark."""

from __future__ import annotations

import copy
import io
import logging
import math
import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import (AttentionWeights, NodeUpdateWeights, attend, attention_probs, dot_expand4,
                        qkv_concat, qkv_split)
from .baselines import vanilla_transformer_layer
from .edge_update import EdgeUpdateWeights, edge_update
from .graph import Graph, permute, permute_nodes
from .model import GraphModel, ModelConfig
from .seeding import derive
from .seeding import rng as seeded_rng
from .train import TrainConfig, train

log = logging.getLogger(__name__)

FAULTS = ("perturb_we_k",)


# ---------------------------------------------------------------------------
# references and small builders


def standard_transformer_reference(nodes: np.ndarray, w: AttentionWeights, nu: NodeUpdateWeights,
                                   eps: float = 1e-5) -> np.ndarray:
    """Edge-free multi-head transformer layer written directly in numpy."""

    def ln(x, p):
        mu = x.mean(-1, keepdims=True)
        var = ((x - mu) ** 2).mean(-1, keepdims=True)
        return (x - mu) / np.sqrt(var + eps) * p.gain.data + p.bias.data

    heads = []
    for h in range(w.num_heads):
        c = w.head_columns(h)
        q = nodes @ w.wq_n.data[:, c] + w.bq.data[c]
        k = nodes @ w.wk_n.data[:, c] + w.bk.data[c]
        v = nodes @ w.wv_n.data[:, c] + w.bv.data[c]
        s = q @ np.swapaxes(k, -1, -2) / math.sqrt(w.head_size)
        a = np.exp(s - s.max(axis=-1, keepdims=True))
        a /= a.sum(axis=-1, keepdims=True)
        heads.append(a @ v)
    m = np.concatenate(heads, axis=-1) @ w.out.weight.data + w.out.bias.data
    u = ln(m @ nu.w1.weight.data + nu.w1.bias.data + nodes, nu.ln1)
    hidden = np.maximum(u @ nu.w2.weight.data + nu.w2.bias.data, 0.0)
    return ln(hidden @ nu.w3.weight.data + nu.w3.bias.data + u, nu.ln2)


def _randomise_biases(rng, groups):
    for g in groups:
        for name, t in g.named_parameters():
            if name.rsplit(".", 1)[-1] in ("bias", "bq", "bk", "bv"):
                t.data = rng.normal(scale=0.3, size=t.shape)


def random_layer(rng, d_n, d_e, heads=2, head_size=3, d_nh=6, d_eh1=5, d_eh2=4):
    """Attention, node-update and edge-update weights with non-zero biases."""
    w = AttentionWeights.init(rng, d_n, d_e, heads, head_size)
    nu = NodeUpdateWeights.init(rng, d_n, d_nh)
    eu = EdgeUpdateWeights.init(rng, d_n, d_e, d_eh1, d_eh2) if d_e else None
    _randomise_biases(rng, [w, nu] + ([eu] if eu else []))
    return w, nu, eu


def rt_layer_loss(nodes, edges, w, nu, eu, probe_n, probe_e):
    """Scalar probe of one full relational transformer layer (node and edge outputs)."""
    n_out = attend(nodes, edges, w, nu)
    e_out = edge_update(edges, n_out, eu)
    return ad.sum_(n_out * probe_n) + ad.sum_(e_out * probe_e)


# ---------------------------------------------------------------------------
# individual checks; each returns the worst observed discrepancy


def check_form_equivalence(seed: int, graphs: int = 100) -> float:
    worst = 0.0
    for g in range(graphs):
        r = seeded_rng(seed, "form", g)
        n, d_n, d_e = int(r.integers(2, 11)), int(r.integers(1, 9)), int(r.integers(1, 9))
        heads, hs = int(r.integers(1, 4)), int(r.integers(1, 6))
        w, _, _ = random_layer(r, d_n, d_e, heads, hs)
        nodes, edges = r.normal(size=(n, d_n)), r.normal(size=(n, n, d_e))
        for a, b in zip(qkv_split(nodes, edges, w), qkv_concat(nodes, edges, w)):
            worst = max(worst, float(np.abs(a.data - b).max()))
    return worst


def check_expansion_identity(seed: int, draws: int = 1000, fault: str | None = None) -> float:
    worst = 0.0
    for k in range(draws):
        r = seeded_rng(seed, "expand", k)
        d_n, d_e = int(r.integers(1, 9)), int(r.integers(1, 9))
        w, _, _ = random_layer(r, d_n, d_e, 1, int(r.integers(1, 9)))
        n_i, n_j, e_ij = r.normal(size=d_n), r.normal(size=d_n), r.normal(size=d_e)
        q, kk, _ = qkv_split(np.stack([n_i, n_j]), np.broadcast_to(e_ij, (2, 2, d_e)), w, head=0)
        expanded_w = w
        if fault == "perturb_we_k":
            expanded_w = copy.deepcopy(w)
            expanded_w.wk_e.data = expanded_w.wk_e.data + 0.01
        total = dot_expand4(n_i, n_j, e_ij, expanded_w, 0).total
        worst = max(worst, abs(total - float(q.data[0, 1] @ kk.data[0, 1])))
    return worst


def check_degenerate_reduction(seed: int, sets: int = 50) -> tuple[int, float]:
    """Mismatching sets (bitwise) against the vanilla layer, and max gap to the numpy reference."""
    mismatches, worst = 0, 0.0
    for s in range(sets):
        r = seeded_rng(seed, "reduce", s)
        n, d_n = int(r.integers(1, 9)), int(r.integers(2, 9))
        cfg = ModelConfig(node_in=d_n, edge_in=1, d_n=d_n, d_e=0, num_layers=1,
                          num_heads=int(r.integers(1, 4)), head_size=int(r.integers(1, 6)),
                          d_nh=int(r.integers(1, 9)), edge_updates=False)
        model = GraphModel.init(cfg, derive(seed, "reduce-model", s))
        layer = model.params.layers[0]
        _randomise_biases(r, [layer.attn, layer.node])
        nodes = r.normal(size=(n, d_n))
        rt_nodes, _ = model.process(ad.Tensor(nodes), ad.Tensor(np.zeros((n, n, 0))))
        vanilla = vanilla_transformer_layer(nodes, layer.attn, layer.node).data
        if rt_nodes.data.tobytes() != vanilla.tobytes():
            mismatches += 1
        ref = standard_transformer_reference(nodes, layer.attn, layer.node)
        worst = max(worst, float(np.abs(vanilla - ref).max()))
    return mismatches, worst


def random_rt_model(seed: int, node_in=3, edge_in=2, layers=3, **overrides) -> GraphModel:
    cfg = ModelConfig(**{**dict(node_in=node_in, edge_in=edge_in, d_n=8, d_e=6, num_layers=layers,
                                num_heads=2, head_size=4, d_nh=8, d_eh1=6, d_eh2=5), **overrides})
    model = GraphModel.init(cfg, seed)
    _randomise_biases(seeded_rng(seed, "bias"), [model.params])
    return model


def check_model_equivariance(seed: int, graphs: int = 50, layers: int = 3) -> float:
    worst = 0.0
    for k in range(graphs):
        r = seeded_rng(seed, "equiv", k)
        model = random_rt_model(derive(seed, "equiv-model", k), layers=layers)
        n = int(r.integers(2, 9))
        g = Graph(r.normal(size=(n, 3)), r.normal(size=(n, n, 2)))
        pi = r.permutation(n)
        with ad.no_grad():
            n0, e0 = model.forward_graph(g)
            n1, e1 = model.forward_graph(permute(g, pi))
        worst = max(worst, float(np.abs(n1.data - permute_nodes(n0.data, pi)).max()),
                    float(np.abs(e1.data - permute_nodes(e0.data, pi, (0, 1))).max()))
    return worst


def check_gradients(seed: int, n: int = 5, d_n: int = 8, d_e: int = 4, h: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients over every layer parameter."""
    r = seeded_rng(seed, "grad")
    w, nu, eu = random_layer(r, d_n, d_e, heads=2, head_size=3, d_nh=6, d_eh1=5, d_eh2=4)
    nodes, edges = r.normal(size=(n, d_n)), r.normal(size=(n, n, d_e))
    probe_n, probe_e = r.normal(size=(n, d_n)), r.normal(size=(n, n, d_e))
    params = w.parameters() + nu.parameters() + eu.parameters()
    for p in params:
        p.zero_grad()
    ad.backward(rt_layer_loss(nodes, edges, w, nu, eu, probe_n, probe_e))
    worst = 0.0
    with ad.no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            analytic = p.grad.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = rt_layer_loss(nodes, edges, w, nu, eu, probe_n, probe_e).item()
                flat[k] = orig - h
                down = rt_layer_loss(nodes, edges, w, nu, eu, probe_n, probe_e).item()
                flat[k] = orig
                numeric = (up - down) / (2 * h)
                denom = max(abs(analytic[k]), abs(numeric), 1e-6)
                worst = max(worst, abs(analytic[k] - numeric) / denom)
    return worst


def check_softmax_rows(seed: int, graphs: int = 50) -> float:
    worst = 0.0
    for k in range(graphs):
        r = seeded_rng(seed, "softmax", k)
        n = int(r.integers(1, 10))
        w, _, _ = random_layer(r, 4, 3)
        q, kk, _ = qkv_split(r.normal(size=(n, 4)) * 3, r.normal(size=(n, n, 3)) * 3, w)
        probs = attention_probs(q, kk, w.num_heads, w.head_size).data
        worst = max(worst, float(np.abs(probs.sum(axis=-2) - 1.0).max()))
    return worst


def check_edge_locality(seed: int, n: int = 4) -> int:
    """Number of (perturbed edge, observed pair) combinations that changed outside the locale."""
    r = seeded_rng(seed, "locality")
    _, _, eu = random_layer(r, 5, 3)
    edges, nodes = r.normal(size=(n, n, 3)), r.normal(size=(n, 5))
    with ad.no_grad():
        base = edge_update(edges, nodes, eu).data
        violations = 0
        for a in range(n):
            for b in range(n):
                bumped = edges.copy()
                bumped[a, b] += r.normal(size=3)
                out = edge_update(bumped, nodes, eu).data
                for i in range(n):
                    for j in range(n):
                        if (a, b) not in ((i, j), (j, i)) and not np.array_equal(out[i, j], base[i, j]):
                            violations += 1
    return violations


# ---------------------------------------------------------------------------
# verify


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class VerifyReport:
    seed: int
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("check,value,threshold,verdict\n")
        for c in self.checks:
            buf.write(f"{c.name},{c.value!r},{c.threshold!r},{'PASS' if c.passed else 'FAIL'}\n")
        return buf.getvalue()


def verify(seed: int = 0, fault: str | None = None, scale: float = 1.0) -> VerifyReport:
    """Run the full property suite with fixed seeds; ``scale`` shrinks instance counts."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}")
    count = lambda k: max(1, int(round(k * scale)))  # noqa: E731
    report = VerifyReport(seed)

    def add(name, value, threshold, ok):
        report.checks.append(CheckResult(name, float(value), float(threshold), bool(ok)))
        log.info("%s %s (%.3g vs %.3g)", "PASS" if ok else "FAIL", name, value, threshold)

    v = check_form_equivalence(seed, count(100))
    add("form_equivalence", v, 1e-12, v <= 1e-12)
    v = check_expansion_identity(seed, count(1000), fault)
    add("expansion_identity", v, 1e-12, v <= 1e-12)
    mism, gap = check_degenerate_reduction(seed, count(50))
    add("degenerate_reduction_bitwise", mism, 0, mism == 0)
    add("degenerate_reduction_reference", gap, 1e-12, gap <= 1e-12)
    v = check_model_equivariance(seed, count(50))
    add("permutation_equivariance", v, 1e-9, v <= 1e-9)
    v = check_gradients(seed)
    add("gradient_check", v, 1e-4, v < 1e-4)
    v = check_softmax_rows(seed, count(50))
    add("softmax_normalisation", v, 1e-12, v <= 1e-12)
    v = check_edge_locality(seed)
    add("edge_locality", v, 0, v == 0)
    return report


# ---------------------------------------------------------------------------
# ablations


ABLATIONS = ("no_edges", "no_edge_updates", "layers", "ptr_decoding")


def matched_transformer(cfg: TrainConfig) -> TrainConfig:
    """Edge-free transformer whose feed-forward width brings its size closest to the RT's."""
    target = GraphModel.init(cfg.model_config(), 0).num_parameters()
    best, best_gap = cfg.replace(model="transformer"), None
    for d_nh in range(cfg.d_nh, cfg.d_nh * 64 + 1):
        cand = cfg.replace(model="transformer", d_nh=d_nh)
        size = GraphModel.init(cand.model_config(), 0).num_parameters()
        gap = abs(size - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = cand, gap
        if size > target:
            break
    return best


def ablation_variants(which: str, cfg: TrainConfig, layer_counts=(1, 3)) -> dict:
    if which == "no_edges":
        return {"rt": cfg.replace(model="rt"), "transformer": matched_transformer(cfg)}
    if which == "no_edge_updates":
        return {"rt": cfg.replace(model="rt", edge_updates=True),
                "rt_no_edge_updates": cfg.replace(model="rt", edge_updates=False)}
    if which == "layers":
        return {f"rt_L{k}": cfg.replace(model="rt", layers=k) for k in layer_counts}
    if which == "ptr_decoding":
        return {"ptr_from_edges": cfg.replace(model="rt", ptr_from_edges=True),
                "ptr_from_nodes": cfg.replace(model="rt", ptr_from_edges=False)}
    raise ValueError(f"unknown ablation {which!r}; choose from {ABLATIONS}")


ABLATION_COLUMNS = ("ablation", "variant", "seed", "num_params", "best_epoch", "split",
                    "metric_name", "value")


def ablate(which: str, cfg: TrainConfig, seeds, layer_counts=(1, 3)) -> list:
    """Train every variant once per seed; returns flat result rows."""
    rows = []
    for seed in seeds:
        for name, variant in ablation_variants(which, cfg, layer_counts).items():
            run_cfg = variant.replace(seed=seed)
            result = train(run_cfg)
            size = result.model.num_parameters()
            for rec in result.metrics.records:
                if rec["split"] in ("test_id", "test_ood"):
                    rows.append({"ablation": which, "variant": name, "seed": seed,
                                 "num_params": size, "best_epoch": result.metrics.summary["best_epoch"],
                                 "split": rec["split"], "metric_name": rec["metric_name"],
                                 "value": rec["value"]})
            log.info("ablation %s seed %d variant %s: %s", which, seed, name, result.metrics.summary)
    return rows


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in columns) + "\n")
    return buf.getvalue()


def paired_wins(rows, winner: str, loser: str, split: str, metric: str, higher_is_better=False):
    """Per-seed comparison; returns ``(wins, seeds)``."""
    table = {}
    for r in rows:
        if r["split"] == split and r["metric_name"] == metric:
            table.setdefault(r["seed"], {})[r["variant"]] = r["value"]
    wins = 0
    for vals in table.values():
        a, b = vals[winner], vals[loser]
        wins += (a > b) if higher_is_better else (a < b)
    return wins, len(table)


# ---------------------------------------------------------------------------
# scaling benchmark


BENCH_MODEL = dict(node_in=4, edge_in=4, d_n=32, d_e=16, num_layers=1, num_heads=4, head_size=8,
                   d_nh=32, d_eh1=32, d_eh2=16)


@dataclass
class BenchResult:
    sizes: list
    times_ms: list
    peak_bytes: list

    @property
    def slope(self) -> float:
        return float(np.polyfit(np.log(self.sizes), np.log(self.times_ms), 1)[0])

    @property
    def ratios(self) -> list:
        return [self.times_ms[k + 1] / self.times_ms[k] for k in range(len(self.sizes) - 1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("n,time_ms,peak_bytes\n")
        for n, t, p in zip(self.sizes, self.times_ms, self.peak_bytes):
            buf.write(f"{n},{t:.4f},{p}\n")
        return buf.getvalue()


def bench(sizes=(32, 64, 128, 256), seed: int = 0, repeats: int = 5, **model_overrides) -> BenchResult:
    """Best-of-``repeats`` forward wall time and traced peak allocation per graph size."""
    model = GraphModel.init(ModelConfig(**{**BENCH_MODEL, **model_overrides}), seed)
    cfg = model.config
    times, peaks = [], []
    for n in sizes:
        r = seeded_rng(seed, "bench", n)
        nodes, edges = r.normal(size=(n, cfg.node_in)), r.normal(size=(n, n, cfg.edge_in))
        best = math.inf
        with ad.no_grad():
            model.forward(nodes, edges)
            for _ in range(repeats):
                t0 = time.perf_counter()
                model.forward(nodes, edges)
                best = min(best, time.perf_counter() - t0)
            tracemalloc.start()
            model.forward(nodes, edges)
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
        times.append(best * 1000.0)
        peaks.append(int(peak))
    return BenchResult(list(sizes), times, peaks)


# ---------------------------------------------------------------------------
# desk-scale training profiles

_DESK_WIDTHS = dict(d_n=32, d_e=32, num_heads=4, head_size=8, d_nh=32, d_eh1=32, d_eh2=16,
                    batch_size=16)

DESK_PROFILES = {
    "lobster": dict(_DESK_WIDTHS, layers=8, learning_rate=2e-4, epochs=12, n_train=1000,
                    n_test=200, train_min=4, train_max=16, test_min=32, test_max=33),
    "fw_step": dict(_DESK_WIDTHS, layers=3, learning_rate=1e-3, epochs=5, n_train=2000,
                    n_test=200, train_min=8, train_max=9, test_min=8, test_max=9),
    "bfs_ptr": dict(_DESK_WIDTHS, layers=3, learning_rate=1e-3, epochs=5, n_train=500,
                    n_test=100, train_min=4, train_max=16, test_min=32, test_max=33),
}


def desk_config(task: str, **overrides) -> TrainConfig:
    """Reduced-width configuration that trains in minutes on one CPU core."""
    return TrainConfig(task=task, **{**DESK_PROFILES[task], **overrides})
