"""Deterministic training: losses, Adam with global-norm clipping, evaluation, metrics."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ContractError, TrainingDivergedError
from .model import GraphModel, ModelConfig, argmax_pointers, collate, load_parameters, snapshot
from .seeding import derive
from .seeding import rng as seeded_rng
from .tasks import generate, relative_loss, task_info

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "split", "metric_name", "value", "wall_ms", "config_hash")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    task: str = "lobster"
    model: str = "rt"
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 6.3e-5
    grad_clip: float = 128.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # data
    n_train: int = 1000
    train_min: int = 4
    train_max: int = 16
    n_test: int = 200
    test_min: int = 32
    test_max: int = 33
    p_leg: float = 0.5
    p_foot: float = 0.5
    # model; tuned lobster widths, with 8 layers rather than the 30 of the full-scale run
    layers: int = 8
    d_n: int = 180
    d_e: int = 128
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
    record_wall_time: bool = False

    def __post_init__(self):
        task_info(self.task)
        for name in ("epochs", "n_train", "n_test", "layers"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        for name in ("batch_size", "learning_rate", "grad_clip", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def model_config(self) -> ModelConfig:
        info = task_info(self.task)
        variant = {"rt": "rt", "transformer": "transformer", "deepsets": "deepsets",
                   "mpnn": "mpnn"}.get(self.model)
        if variant is None:
            raise ContractError(f"unknown model {self.model!r}")
        return ModelConfig(
            variant=variant, target_kind=info.target_kind, node_in=info.node_in,
            edge_in=info.edge_in, d_n=self.d_n, d_e=self.d_e, num_layers=self.layers,
            num_heads=self.num_heads, head_size=self.head_size, d_nh=self.d_nh,
            d_eh1=self.d_eh1, d_eh2=self.d_eh2, d_p=self.d_p, edge_updates=self.edge_updates,
            global_mode=self.global_mode, ptr_from_edges=self.ptr_from_edges, dropout=self.dropout)


# ---------------------------------------------------------------------------
# config files: flat UTF-8 key=value lines, '#' starts a comment


def _coerce(name, typ, raw: str):
    if typ in (bool, "bool"):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0"):
            raise ContractError(f"{name}: expected true/false, got {raw!r}")
        return low in ("true", "1")
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    return raw.strip()


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ContractError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, types[key], raw)
    return dataclasses.replace(base or TrainConfig(), **values)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# losses


def loss(target_kind: str, prediction, target) -> Tensor:
    """Training loss for a (possibly batched) prediction.

    ``graph_scalar``: mean squared error. ``node_pointer``: mean cross-entropy
    of row-softmaxed pointer logits against target indices. ``edge_scalar``:
    mean squared error over all pairs.
    """
    prediction = as_tensor(prediction)
    if target_kind in ("graph_scalar", "edge_scalar"):
        target = np.asarray(target, dtype=np.float64)
        if target.shape != prediction.shape:
            raise ContractError(f"target shape {target.shape} vs prediction {prediction.shape}")
        return ad.mean(ad.square(prediction - target))
    if target_kind == "node_pointer":
        target = np.asarray(target, dtype=np.int64)
        if target.shape != prediction.shape[:-1]:
            raise ContractError(f"pointer target {target.shape} vs logits {prediction.shape}")
        lsm = ad.log_softmax(prediction, axis=-1)
        idx = tuple(np.indices(target.shape)) + (target,)
        return ad.neg(ad.mean(lsm[idx]))
    raise ContractError(f"unknown target kind {target_kind!r}")


# ---------------------------------------------------------------------------
# optimiser


def clip_by_global_norm(grads, max_norm: float):
    """Scale gradients so their joint L2 norm is at most ``max_norm``; returns ``(grads, norm)``."""
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if norm > max_norm:
        factor = max_norm / norm
        grads = [g * factor for g in grads]
    return grads, norm


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, grad_clip: float | None = None) -> float:
    """One in-place Adam update of the ``params`` tensors; returns the pre-clip gradient norm."""
    grads = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if grad_clip is not None:
        grads, norm = clip_by_global_norm(grads, grad_clip)
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return norm


# ---------------------------------------------------------------------------
# evaluation


def buckets(examples, batch_size: int, rng=None) -> list:
    """Index batches of equal-size graphs; shuffled when ``rng`` is given."""
    by_size = defaultdict(list)
    for i, ex in enumerate(examples):
        by_size[ex.input.num_nodes].append(i)
    batches = []
    for n in sorted(by_size):
        idx = np.array(by_size[n])
        if rng is not None:
            idx = rng.permutation(idx)
        batches.extend(idx[k:k + batch_size].tolist() for k in range(0, len(idx), batch_size))
    if rng is not None:
        order = rng.permutation(len(batches))
        batches = [batches[k] for k in order]
    return batches


def stack_targets(examples):
    return np.stack([np.asarray(ex.target, dtype=np.float64 if ex.target_kind != "node_pointer"
                                else np.int64) for ex in examples])


def evaluate(model: GraphModel, examples, task: str, batch_size: int = 32) -> dict:
    """Loss and task metric over ``examples`` (micro-averaged)."""
    info = task_info(task)
    if not examples:
        return {"loss": float("nan"), info.metric: float("nan")}
    total_loss = 0.0
    metric_sum = 0.0
    metric_count = 0
    with ad.no_grad():
        for batch_idx in buckets(examples, batch_size):
            exs = [examples[i] for i in batch_idx]
            batch = collate([ex.input for ex in exs], model.config.global_mode)
            pred = model.predict_batch(batch)
            target = stack_targets(exs)
            total_loss += loss(info.target_kind, pred, target).item() * len(exs)
            if info.metric == "relative_loss":
                metric_sum += sum(relative_loss(float(y), float(p)) for y, p in zip(target, pred.data))
                metric_count += len(exs)
            elif info.metric == "pointer_accuracy":
                metric_sum += float((argmax_pointers(pred) == target).sum())
                metric_count += target.size
            else:
                metric_sum += float(((pred.data - target) ** 2).sum())
                metric_count += target.size
    return {"loss": total_loss / len(examples), info.metric: metric_sum / metric_count}


# ---------------------------------------------------------------------------
# training loop


@dataclass
class RunMetrics:
    config: dict
    config_hash: str
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    timings: list = field(default_factory=list)

    def add(self, epoch: int, split: str, name: str, value: float, wall_ms: float = 0.0):
        self.records.append({"epoch": epoch, "split": split, "metric_name": name,
                             "value": float(value), "wall_ms": wall_ms,
                             "config_hash": self.config_hash})

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.records:
            buf.write(f"{r['epoch']},{r['split']},{r['metric_name']},{r['value']!r},"
                      f"{r['wall_ms']:.0f},{r['config_hash']}\n")
        return buf.getvalue()

    def value(self, split: str, name: str, epoch: int | None = None) -> float:
        for r in reversed(self.records):
            if r["split"] == split and r["metric_name"] == name and (epoch is None or r["epoch"] == epoch):
                return r["value"]
        raise KeyError((split, name, epoch))


@dataclass
class TrainResult:
    metrics: RunMetrics
    model: GraphModel
    checkpoint: bytes


@dataclass
class Datasets:
    train: list
    val: list
    test_id: list
    test_ood: list


def make_datasets(cfg: TrainConfig) -> Datasets:
    """Generate the pool and hold out ~10% by a seed-stable per-index rule."""
    data_seed = derive(cfg.seed, "data")
    pool = generate(cfg.task, cfg.n_train, derive(data_seed, "train"), cfg.train_min, cfg.train_max,
                    cfg.p_leg, cfg.p_foot)
    is_val = [derive(data_seed, "split", i) % 10 == 0 for i in range(len(pool))]
    train = [ex for ex, v in zip(pool, is_val) if not v]
    val = [ex for ex, v in zip(pool, is_val) if v]
    test_id = generate(cfg.task, cfg.n_test, derive(data_seed, "test_id"), cfg.train_min,
                       cfg.train_max, cfg.p_leg, cfg.p_foot)
    test_ood = generate(cfg.task, cfg.n_test, derive(data_seed, "test_ood"), cfg.test_min,
                        cfg.test_max, cfg.p_leg, cfg.p_foot)
    return Datasets(train, val, test_id, test_ood)


def _better(a: float, b: float | None, higher: bool) -> bool:
    if b is None:
        return True
    return a > b if higher else a < b


def train(cfg: TrainConfig, datasets: Datasets | None = None) -> TrainResult:
    """Train from scratch; the returned model and checkpoint are the best-validation epoch.

    Reruns with the same config give identical metrics and checkpoint bytes.
    """
    info = task_info(cfg.task)
    data = datasets or make_datasets(cfg)
    model = GraphModel.init(cfg.model_config(), derive(cfg.seed, "model"))
    params = model.parameters()
    state = AdamState()
    metrics = RunMetrics(cfg.to_dict(), cfg.config_hash())
    best_score, best_epoch, best_params = None, 0, snapshot(model)
    start = time.perf_counter()

    def stamp():
        return (time.perf_counter() - start) * 1000.0 if cfg.record_wall_time else 0.0

    for epoch in range(1, cfg.epochs + 1):
        order_rng = seeded_rng(cfg.seed, "order", epoch)
        drop_rng = seeded_rng(cfg.seed, "dropout", epoch) if cfg.dropout > 0 else None
        losses, norms = [], []
        for batch_idx in buckets(data.train, cfg.batch_size, order_rng):
            exs = [data.train[i] for i in batch_idx]
            batch = collate([ex.input for ex in exs], cfg.global_mode)
            for p in params:
                p.zero_grad()
            value = loss(info.target_kind, model.predict_batch(batch, drop_rng), stack_targets(exs))
            if not math.isfinite(value.item()):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}; last gradient norms {norms[-5:]}", norms[-5:])
            ad.backward(value)
            norms.append(adam_step(params, [p.grad for p in params], state, cfg.learning_rate,
                                   cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.grad_clip))
            losses.append(value.item())
        metrics.add(epoch, "train", "loss", float(np.mean(losses)) if losses else float("nan"), stamp())
        metrics.add(epoch, "train", "grad_norm", float(np.mean(norms)) if norms else 0.0, stamp())
        val = evaluate(model, data.val, cfg.task)
        for name, v in val.items():
            metrics.add(epoch, "val", name, v, stamp())
        metrics.timings.append((epoch, (time.perf_counter() - start) * 1000.0))
        score = val[info.metric]
        if math.isfinite(score) and _better(score, best_score, info.higher_is_better):
            best_score, best_epoch, best_params = score, epoch, snapshot(model)
        log.info("epoch %d train_loss %.6g val_%s %.6g", epoch, metrics.records[-4]["value"],
                 info.metric, score)

    load_parameters(model, best_params)
    summary = {"best_epoch": best_epoch}
    for split, exs in (("test_id", data.test_id), ("test_ood", data.test_ood)):
        result = evaluate(model, exs, cfg.task)
        for name, v in result.items():
            metrics.add(best_epoch, split, name, v, stamp())
            summary[f"{split}_{name}"] = v
    metrics.summary = summary
    return TrainResult(metrics, model, model.to_bytes())
