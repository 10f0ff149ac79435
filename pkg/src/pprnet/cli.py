"""Command-line driver: convert, split, ppr, train, predict, eval,
run-all, bench.

Configuration comes from a JSON file; command-line flags win over file
values. The PPRNET_WORKERS environment variable overrides the worker
count everywhere. Exit codes: 0 ok, 2 config error, 3 data error,
4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import resource
import sys
import time
from dataclasses import asdict

import numpy as np

from . import graph as graph_mod
from . import model as model_mod
from . import train as train_mod
from .errors import ConfigError, DataError
from .infer import evaluate, power_iteration_predict, sampled_logits
from .model import TrainConfig, forward_local
from .ppr import BoundedConfig, PprConfig, batch_topk_ppr

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _workers(value: int | None) -> int:
    env = os.environ.get("PPRNET_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"PPRNET_WORKERS={env!r} is not an integer") from None
    return max(1, value if value is not None else 1)


def _peak_rss_bytes() -> int:
    # ru_maxrss is kilobytes on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def _write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path: str) -> dict:
    if not os.path.isfile(path):
        raise ConfigError(f"{path}: config file not found")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _ppr_config(obj: dict) -> PprConfig:
    bounded = None
    if obj.get("bounded"):
        b = obj["bounded"]
        if "max_iterations" not in b:
            raise ConfigError("bounded push config needs max_iterations")
        bounded = BoundedConfig(
            max_iterations=int(b["max_iterations"]),
            drop_threshold=float(b.get("drop_threshold", 0.0)),
            degree_cap=int(b.get("degree_cap", 2**62)),
        )
    cfg = PprConfig(
        alpha=float(obj.get("alpha", 0.25)),
        epsilon=float(obj.get("epsilon", 1e-4)),
        k=int(obj.get("k", 32)),
        renormalize_sym=bool(obj.get("renormalize_sym", False)),
        bounded=bounded,
    )
    cfg.validate()
    return cfg


def _train_config(obj: dict, seed: int = 0) -> TrainConfig:
    cfg = TrainConfig(
        learning_rate=float(obj.get("learning_rate", 0.005)),
        dropout_rate=float(obj.get("dropout_rate", 0.1)),
        weight_decay=float(obj.get("weight_decay", 1e-4)),
        batch_size=int(obj.get("batch_size", 512)),
        epochs=int(obj.get("epochs", 200)),
        hidden=int(obj.get("hidden", 32)),
        seed=seed,
    )
    cfg.validate()
    return cfg


# -- subcommands ---------------------------------------------------------


def cmd_convert(args) -> int:
    g = graph_mod.convert_edge_list(
        args.edges,
        args.feat_indptr,
        args.feat_indices,
        args.feat_values,
        args.labels,
        num_features=args.num_features,
        num_classes=args.num_classes,
    )
    std, remap = graph_mod.standardize(g)
    graph_mod.save_dataset(std, args.out)
    remap.astype("<u4").tofile(os.path.join(args.out, "remap.u32"))
    print(
        f"wrote {args.out}: n={std.n} m={std.m} d={std.d} c={std.c} "
        f"(kept {std.n}/{g.n} nodes in largest component)"
    )
    return EXIT_OK


def cmd_split(args) -> int:
    g = graph_mod.load_dataset(args.dataset)
    split = graph_mod.sample_split(g, args.seed)
    _write_json(args.out, split.to_dict())
    print(
        f"wrote {args.out}: train={len(split.train_nodes)} "
        f"val={len(split.val_nodes)} test={len(split.test_nodes)}"
    )
    return EXIT_OK


def _resolve_sources(args, g) -> np.ndarray:
    if args.split:
        with open(args.split) as fh:
            split = graph_mod.DataSplit.from_dict(json.load(fh))
        return split.train_nodes
    return np.arange(g.n, dtype=np.int64)


def cmd_ppr(args) -> int:
    g = graph_mod.load_dataset(args.dataset)
    cfg = PprConfig(
        alpha=args.alpha,
        epsilon=args.epsilon,
        k=args.k,
        renormalize_sym=args.renormalize,
    )
    cfg.validate()
    sources = _resolve_sources(args, g)
    t0 = time.perf_counter()
    topk = batch_topk_ppr(g, cfg, sources, workers=_workers(args.workers))
    elapsed = time.perf_counter() - t0
    topk.save(args.out)
    mean_nnz = topk.indptr[-1] / max(1, topk.num_rows)
    print(
        f"wrote {args.out}: rows={topk.num_rows} mean_nnz={mean_nnz:.2f} "
        f"pushes={topk.num_pushes} ({topk.num_pushes / max(elapsed, 1e-9):.0f}/s)"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    dataset = args.dataset or cfg.get("dataset")
    if not dataset:
        raise ConfigError("no dataset given (flag --dataset or config key)")
    out_dir = args.out or cfg.get("output")
    if not out_dir:
        raise ConfigError("no output directory given (flag --out or config key)")
    seed = args.seed if args.seed is not None else int(cfg.get("split_seed", 0))

    g = graph_mod.load_dataset(dataset, standardized=False)
    g, _remap = graph_mod.standardize(g)
    split = graph_mod.sample_split(g, seed)
    ppr_cfg = _ppr_config(cfg.get("ppr", {}))
    train_cfg = _train_config(cfg.get("train", {}), seed=seed)
    params, log = train_mod.train_model(
        g, split, ppr_cfg, train_cfg, workers=_workers(args.workers)
    )
    model_mod.save_checkpoint(
        params,
        out_dir,
        meta={
            "seed": seed,
            "alpha": ppr_cfg.alpha,
            "train_config": asdict(train_cfg),
        },
    )
    _write_json(
        os.path.join(out_dir, "train_log.json"),
        {
            "per_epoch_loss": log["per_epoch_loss"],
            "preprocessing_s": log["preprocessing_s"],
            "training_s": log["training_s"],
            "val_accuracy": log["val_accuracy"],
        },
    )
    print(
        f"trained: val_accuracy={log['val_accuracy']:.4f} "
        f"preprocessing={log['preprocessing_s']:.2f}s training={log['training_s']:.2f}s"
    )
    return EXIT_OK


def _run_inference(g, params, alpha, steps, fraction, seed):
    """Returns (prediction, forward_s, propagation_s)."""
    if fraction < 1.0:
        t0 = time.perf_counter()
        H = sampled_logits(g, params, fraction, seed)
        forward_s = time.perf_counter() - t0
        t1 = time.perf_counter()
        pred = power_iteration_predict(g, H, alpha, steps)
        propagation_s = time.perf_counter() - t1
        pred.source = f"sparse_logits({fraction},{steps})"
        return pred, forward_s, propagation_s
    t0 = time.perf_counter()
    H = forward_local(params, g.features())
    forward_s = time.perf_counter() - t0
    t1 = time.perf_counter()
    pred = power_iteration_predict(g, H, alpha, steps)
    propagation_s = time.perf_counter() - t1
    return pred, forward_s, propagation_s


def cmd_predict(args) -> int:
    params, meta = model_mod.load_checkpoint(args.checkpoint)
    g = graph_mod.load_dataset(args.dataset)
    alpha = args.alpha if args.alpha is not None else float(meta.get("alpha", 0.25))
    pred, _f, _p = _run_inference(
        g, params, alpha, args.steps, args.fraction, args.seed
    )
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    pred.argmax_labels().astype("<u4").tofile(args.out)
    if args.probs:
        pred.Z.astype("<f4").tofile(args.probs)
    print(f"wrote {args.out}: {pred.n} predictions")
    return EXIT_OK


def cmd_eval(args) -> int:
    params, meta = model_mod.load_checkpoint(args.checkpoint)
    g = graph_mod.load_dataset(args.dataset)
    alpha = args.alpha if args.alpha is not None else float(meta.get("alpha", 0.25))
    with open(args.split) as fh:
        split = graph_mod.DataSplit.from_dict(json.load(fh))
    nodes = {
        "train": split.train_nodes,
        "val": split.val_nodes,
        "test": split.test_nodes,
    }[args.subset]
    pred, forward_s, propagation_s = _run_inference(
        g, params, alpha, args.steps, args.fraction, args.seed
    )
    metrics = evaluate(pred, g.labels, nodes)
    payload = {
        "accuracy": metrics["accuracy"],
        "n_eval": metrics["n_eval"],
        "forward_s": forward_s,
        "propagation_s": propagation_s,
        "inference_s": forward_s + propagation_s,
    }
    _write_json(args.out, payload)
    print(f"wrote {args.out}: accuracy={metrics['accuracy']:.4f} on {args.subset}")
    return EXIT_OK


def _single_run(g, seed, ppr_obj, train_obj, infer_obj, workers, out_dir):
    split = graph_mod.sample_split(g, seed)
    ppr_cfg = _ppr_config(ppr_obj)
    train_cfg = _train_config(train_obj, seed=seed)
    steps = int(infer_obj.get("power_iteration_steps", 2))
    fraction = float(infer_obj.get("fraction", 1.0))

    t0 = time.perf_counter()
    topk = batch_topk_ppr(g, ppr_cfg, split.train_nodes, workers=workers)
    preprocessing_s = time.perf_counter() - t0
    if out_dir:
        topk.save(out_dir)

    params, log = train_mod.train_model(
        g, split, ppr_cfg, train_cfg, workers=workers, precomputed_topk=topk
    )
    pred, forward_s, propagation_s = _run_inference(
        g, params, ppr_cfg.alpha, steps, fraction, seed
    )
    metrics = evaluate(pred, g.labels, split.test_nodes)

    if out_dir:
        model_mod.save_checkpoint(
            params, out_dir, meta={"seed": seed, "alpha": ppr_cfg.alpha}
        )
        _write_json(
            os.path.join(out_dir, "train_log.json"),
            {
                "per_epoch_loss": log["per_epoch_loss"],
                "preprocessing_s": log["preprocessing_s"],
                "training_s": log["training_s"],
                "val_accuracy": log["val_accuracy"],
            },
        )
        pred.argmax_labels().astype("<u4").tofile(
            os.path.join(out_dir, "predictions.u32")
        )
        _write_json(
            os.path.join(out_dir, "metrics.json"),
            {
                "accuracy": metrics["accuracy"],
                "n_eval": metrics["n_eval"],
                "forward_s": forward_s,
                "propagation_s": propagation_s,
                "inference_s": forward_s + propagation_s,
            },
        )

    epochs = max(1, train_cfg.epochs)
    return {
        "seed": int(seed),
        "preprocessing_s": preprocessing_s,
        "per_epoch_s": log["training_s"] / epochs,
        "training_s": log["training_s"],
        "forward_s": forward_s,
        "propagation_s": propagation_s,
        "inference_s": forward_s + propagation_s,
        "total_s": preprocessing_s + log["training_s"] + forward_s + propagation_s,
        "peak_rss_bytes": _peak_rss_bytes(),
        "accuracy": metrics["accuracy"],
        "val_accuracy": log["val_accuracy"],
    }


_AGG_FIELDS = [
    "preprocessing_s",
    "per_epoch_s",
    "training_s",
    "forward_s",
    "propagation_s",
    "inference_s",
    "total_s",
    "peak_rss_bytes",
    "accuracy",
]


def _aggregate_runs(runs: list[dict]) -> dict:
    mean = {}
    std = {}
    for key in _AGG_FIELDS:
        vals = np.array([r[key] for r in runs], dtype=np.float64)
        mean[key] = float(vals.mean())
        std[key] = float(vals.std())
    return {"runs": runs, "mean": mean, "std": std}


def cmd_run_all(args) -> int:
    cfg = _load_config_file(args.config)
    dataset = args.dataset or cfg.get("dataset")
    if not dataset:
        raise ConfigError("no dataset given (flag --dataset or config key)")
    out_root = args.out or cfg.get("output")
    if not out_root:
        raise ConfigError("no output directory given (flag --out or config key)")
    seeds = args.seeds if args.seeds else cfg.get("seeds", [0])
    workers = _workers(args.workers if args.workers else cfg.get("workers"))
    ppr_obj = dict(cfg.get("ppr", {}))
    train_obj = dict(cfg.get("train", {}))
    infer_obj = dict(cfg.get("inference", {}))
    if args.epsilon is not None:
        ppr_obj["epsilon"] = args.epsilon
    if args.k is not None:
        ppr_obj["k"] = args.k
    if args.epochs is not None:
        train_obj["epochs"] = args.epochs

    g = graph_mod.load_dataset(dataset, standardized=False)
    g, remap = graph_mod.standardize(g)
    os.makedirs(out_root, exist_ok=True)
    remap.astype("<u4").tofile(os.path.join(out_root, "remap.u32"))

    runs = []
    for seed in seeds:
        run_dir = os.path.join(out_root, f"seed_{seed}")
        runs.append(
            _single_run(g, int(seed), ppr_obj, train_obj, infer_obj, workers, run_dir)
        )
        print(
            f"seed {seed}: accuracy={runs[-1]['accuracy']:.4f} "
            f"total={runs[-1]['total_s']:.2f}s"
        )
    results = _aggregate_runs(runs)
    _write_json(os.path.join(out_root, "results.json"), results)
    print(
        f"wrote {os.path.join(out_root, 'results.json')}: "
        f"accuracy={results['mean']['accuracy']:.4f} "
        f"+- {results['std']['accuracy']:.4f} over {len(runs)} seeds"
    )

    grid = cfg.get("grid")
    if grid:
        eps_values = [float(e) for e in grid.get("epsilon", [ppr_obj.get("epsilon", 1e-4)])]
        k_values = [int(k) for k in grid.get("k", [ppr_obj.get("k", 32)])]
        acc_mean = []
        acc_std = []
        for eps in eps_values:
            row_mean, row_std = [], []
            for k in k_values:
                cell_obj = dict(ppr_obj)
                cell_obj["epsilon"] = eps
                cell_obj["k"] = k
                cell_runs = [
                    _single_run(g, int(s), cell_obj, train_obj, infer_obj, workers, None)
                    for s in seeds
                ]
                accs = np.array([r["accuracy"] for r in cell_runs])
                row_mean.append(float(accs.mean()))
                row_std.append(float(accs.std()))
                print(f"grid eps={eps} k={k}: accuracy={row_mean[-1]:.4f}")
            acc_mean.append(row_mean)
            acc_std.append(row_std)
        _write_json(
            os.path.join(out_root, "grid.json"),
            {
                "epsilon": eps_values,
                "k": k_values,
                "accuracy_mean": acc_mean,
                "accuracy_std": acc_std,
                "seeds": [int(s) for s in seeds],
            },
        )
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.target != "ppr":
        raise ConfigError(f"unknown bench target {args.target!r}")
    g = graph_mod.load_dataset(args.dataset)
    cfg = PprConfig(alpha=args.alpha, epsilon=args.epsilon, k=args.k)
    cfg.validate()
    rng = np.random.default_rng(args.seed)
    n_sources = min(args.sources, g.n)
    sources = np.sort(rng.choice(g.n, size=n_sources, replace=False))
    # warm-up pass compiles the kernels so the timing covers pushes only
    batch_topk_ppr(g, cfg, sources[:1], workers=_workers(args.workers))
    t0 = time.perf_counter()
    topk = batch_topk_ppr(g, cfg, sources, workers=_workers(args.workers))
    elapsed = time.perf_counter() - t0
    mean_nnz = topk.indptr[-1] / max(1, topk.num_rows)
    print(
        f"ppr bench: {topk.num_rows} sources in {elapsed:.3f}s | "
        f"{topk.num_pushes / max(elapsed, 1e-9):.0f} pushes/s | "
        f"mean nnz/row {mean_nnz:.2f}"
    )
    return EXIT_OK


# -- argument parsing ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pprnet",
        description="Node classification via sparse PPR propagation of MLP logits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="edge list + feature CSR -> dataset dir")
    p.add_argument("--edges", required=True)
    p.add_argument("--feat-indptr", required=True)
    p.add_argument("--feat-indices", required=True)
    p.add_argument("--feat-values", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--num-features", type=int, default=None)
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("split", help="sample a train/val/test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("ppr", help="precompute top-k PPR rows")
    p.add_argument("--dataset", required=True)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--renormalize", action="store_true")
    p.add_argument("--split", default=None, help="split.json; uses its train nodes")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ppr)

    p = sub.add_parser("train", help="train a model per config file")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write argmax predictions for all nodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--steps", type=int, default=2)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--probs", default=None, help="also dump probabilities here")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="run inference and score a split subset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--subset", choices=["train", "val", "test"], default="test")
    p.add_argument("--steps", type=int, default=2)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run-all", help="standardize, split, train, predict, eval")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seeds", type=int, nargs="*", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("bench", help="micro-benchmarks")
    p.add_argument("target", choices=["ppr"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--sources", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
