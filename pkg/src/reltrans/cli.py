"""Command-line entry point: gen, train, eval, verify, ablate, bench and rerun.

Every run writes ``manifest.json`` into its output directory holding the
resolved configuration, the subcommand options and a sha256 per artifact.
``rerun`` replays a manifest into a fresh directory and compares hashes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from importlib import metadata
from pathlib import Path

from .errors import ReltransError
from .experiments import (ABLATION_COLUMNS, ABLATIONS, DESK_PROFILES, FAULTS, ablate, bench,
                          paired_wins, rows_to_csv, verify)
from .graph import load_dataset, save_dataset
from .model import load_checkpoint
from .tasks import TASKS, task_info
from .train import (Datasets, RunMetrics, TrainConfig, evaluate, make_datasets, parse_config,
                    train)

log = logging.getLogger("reltrans")

SUBCOMMANDS = ("gen", "train", "eval", "verify", "ablate", "bench")
# artifacts whose bytes depend on wall-clock measurements
NONDETERMINISTIC = {"bench.csv"}
SPLITS = ("train", "val", "test_id", "test_ood")


def _bool(text: str) -> bool:
    low = text.lower()
    if low not in ("true", "false"):
        raise argparse.ArgumentTypeError("expected true or false")
    return low == "true"


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _sizes(text: str) -> list:
    return [int(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reltrans", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="flat key=value config file")
        p.add_argument("--profile", choices=("full", "desk"), default="full",
                       help="base hyperparameters before --config and flags are applied")
        p.add_argument("--seed", type=_u64)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--task", choices=sorted(TASKS))
        p.add_argument("--model", choices=("rt", "deepsets", "mpnn", "transformer"))
        p.add_argument("--layers", type=int)
        p.add_argument("--global-mode", choices=("cat", "core"))
        p.add_argument("--ptr-from-edges", type=_bool)
        p.add_argument("--epochs", type=int)
        return p

    common(sub.add_parser("gen", help="generate and save the train/val/test datasets"))
    p = common(sub.add_parser("train", help="train a model and save its best checkpoint"))
    p.add_argument("--data", type=Path, help="directory written by 'gen' (default: generate)")
    p = common(sub.add_parser("eval", help="evaluate a checkpoint on a saved dataset"))
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True)
    p = common(sub.add_parser("verify", help="run the property verification suite"))
    p.add_argument("--fault", choices=FAULTS)
    p.add_argument("--scale", type=float, default=1.0, help="fraction of the instance counts")
    p = common(sub.add_parser("ablate", help="paired training runs for one ablation"))
    p.add_argument("--which", choices=ABLATIONS, required=True)
    p.add_argument("--num-seeds", type=int, default=5)
    p.add_argument("--layer-counts", type=_sizes, default=[1, 3])
    p = common(sub.add_parser("bench", help="forward-pass scaling benchmark"))
    p.add_argument("--sizes", type=_sizes, default=[32, 64, 128, 256])
    p.add_argument("--repeats", type=int, default=5)
    p = sub.add_parser("rerun", help="replay a manifest and compare artifact hashes")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    return parser


def resolve_config(args) -> TrainConfig:
    """Profile defaults, then the config file, then explicit flags."""
    text = args.config.read_text(encoding="utf-8") if args.config is not None else ""
    task = args.task or parse_config(text).task
    base = TrainConfig(task=task, **DESK_PROFILES[task]) if args.profile == "desk" else TrainConfig()
    cfg = parse_config(text, base)
    flags = {"seed": args.seed, "task": args.task, "model": args.model, "layers": args.layers,
             "global_mode": args.global_mode, "ptr_from_edges": args.ptr_from_edges,
             "epochs": args.epochs}
    return cfg.replace(**{k: v for k, v in flags.items() if v is not None})


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


def write_manifest(out: Path, command: str, cfg: TrainConfig, options: dict, artifacts: list,
                   extra: dict | None = None) -> dict:
    manifest = {
        "command": command,
        "version": _version(),
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "options": options,
        "artifacts": {name: sha256_file(out / name) for name in sorted(artifacts)},
        "nondeterministic": sorted(set(artifacts) & NONDETERMINISTIC),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# subcommand bodies; each returns (artifact names, exit code, extra manifest fields)


def run_gen(cfg: TrainConfig, opts: dict, out: Path):
    data = make_datasets(cfg)
    names = []
    for split in SPLITS:
        examples = getattr(data, split)
        save_dataset(out / f"{split}.rtd", examples)
        meta = {"task": cfg.task, "split": split, "count": len(examples), "seed": cfg.seed,
                "config_hash": cfg.config_hash(),
                "sizes": sorted({ex.input.num_nodes for ex in examples})}
        (out / f"{split}.rtd.meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n",
                                                    encoding="utf-8")
        names += [f"{split}.rtd", f"{split}.rtd.meta.json"]
    return names, 0, {}


def run_train(cfg: TrainConfig, opts: dict, out: Path):
    datasets = None
    if opts.get("data"):
        d = Path(opts["data"])
        datasets = Datasets(*(load_dataset(d / f"{s}.rtd") for s in SPLITS))
    result = train(cfg, datasets)
    (out / "metrics.csv").write_text(result.metrics.to_csv(), encoding="utf-8")
    (out / "checkpoint.rtm").write_bytes(result.checkpoint)
    for key, value in sorted(result.metrics.summary.items()):
        print(f"{key}: {value:.6g}" if isinstance(value, float) else f"{key}: {value}")
    return ["metrics.csv", "checkpoint.rtm"], 0, {"summary": result.metrics.summary}


def run_eval(cfg: TrainConfig, opts: dict, out: Path):
    model = load_checkpoint(Path(opts["checkpoint"]).read_bytes())
    if model.config.target_kind != task_info(cfg.task).target_kind:
        raise ReltransError(f"checkpoint predicts {model.config.target_kind}, task {cfg.task} "
                            f"needs {task_info(cfg.task).target_kind}")
    examples = load_dataset(opts["dataset"])
    metrics = RunMetrics(cfg.to_dict(), cfg.config_hash())
    result = evaluate(model, examples, cfg.task)
    for name, value in result.items():
        metrics.add(0, "eval", name, value)
        print(f"{name}: {value:.6g}")
    (out / "metrics.csv").write_text(metrics.to_csv(), encoding="utf-8")
    return ["metrics.csv"], 0, {"inputs": {"checkpoint": sha256_file(Path(opts["checkpoint"])),
                                           "dataset": sha256_file(Path(opts["dataset"]))}}


def run_verify(cfg: TrainConfig, opts: dict, out: Path):
    report = verify(cfg.seed, opts.get("fault"), opts.get("scale", 1.0))
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    width = max(len(c.name) for c in report.checks)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  {c.value:.3g} "
              f"(threshold {c.threshold:.3g})")
    return ["metrics.csv"], 0 if report.passed else 1, {"passed": report.passed}


def run_ablate(cfg: TrainConfig, opts: dict, out: Path):
    seeds = [cfg.seed + k for k in range(opts["num_seeds"])]
    rows = ablate(opts["which"], cfg, seeds, tuple(opts["layer_counts"]))
    (out / "ablation.csv").write_text(rows_to_csv(rows, ABLATION_COLUMNS), encoding="utf-8")
    info = task_info(cfg.task)
    pairs = {"no_edges": ("rt", "transformer"),
             "no_edge_updates": ("rt", "rt_no_edge_updates"),
             "ptr_decoding": ("ptr_from_edges", "ptr_from_nodes")}
    extra = {}
    if opts["which"] in pairs:
        a, b = pairs[opts["which"]]
        for split in ("test_id", "test_ood"):
            wins, total = paired_wins(rows, a, b, split, info.metric, info.higher_is_better)
            print(f"{split}: {a} beats {b} in {wins}/{total} seeds ({info.metric})")
            extra[f"{split}_wins"] = [wins, total]
    return ["ablation.csv"], 0, extra


def run_bench(cfg: TrainConfig, opts: dict, out: Path):
    result = bench(opts["sizes"], cfg.seed, opts["repeats"])
    (out / "bench.csv").write_text(result.to_csv(), encoding="utf-8")
    print(result.to_csv(), end="")
    slope = result.slope if len(result.sizes) > 1 else float("nan")
    print(f"log-log slope: {slope:.3f}; doubling ratios: "
          + ", ".join(f"{r:.2f}" for r in result.ratios))
    return ["bench.csv"], 0, {"slope": slope, "ratios": result.ratios}


RUNNERS = {"gen": run_gen, "train": run_train, "eval": run_eval, "verify": run_verify,
           "ablate": run_ablate, "bench": run_bench}


def execute(command: str, cfg: TrainConfig, opts: dict, out: Path) -> tuple[int, dict]:
    out.mkdir(parents=True, exist_ok=True)
    artifacts, code, extra = RUNNERS[command](cfg, opts, out)
    manifest = write_manifest(out, command, cfg, opts, artifacts, extra)
    return code, manifest


def rerun(manifest_path: Path, out: Path) -> int:
    """Replay a manifest; exit code 1 if any deterministic artifact hash differs."""
    old = json.loads(manifest_path.read_text(encoding="utf-8"))
    cfg = TrainConfig(**old["config"])
    code, new = execute(old["command"], cfg, old["options"], out)
    mismatched = []
    for name, digest in old["artifacts"].items():
        same = new["artifacts"].get(name) == digest
        note = "" if same else (" (timing, expected to vary)" if name in NONDETERMINISTIC else "")
        print(f"{'MATCH' if same else 'DIFFER'}  {name}{note}")
        if not same and name not in NONDETERMINISTIC:
            mismatched.append(name)
    return 1 if mismatched else code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            return rerun(args.manifest, args.out)
        cfg = resolve_config(args)
        opts = {k: (str(v.resolve()) if isinstance(v, Path) else v) for k, v in vars(args).items()
                if k not in ("command", "verbose", "config", "profile", "seed", "out", "task",
                             "model", "layers", "global_mode", "ptr_from_edges", "epochs")}
        code, _ = execute(args.command, cfg, opts, args.out)
        return code
    except (ReltransError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
