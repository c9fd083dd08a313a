"""Command line driver: run / compare / sweep / similarity / gen-data.

All outputs are plain files (CSV, JSON, SVG) written atomically; nothing is
interactive. Fixed seeds give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

from . import evalkit, svg
from .config import ConfigError, parse_config, parse_sweep
from .data import generate_synthetic, save_dataset
from .engine import ExperimentConfig, build_data, run_experiment
from .rng import substream

CSV_HEADER = "round,cum_gflops,cum_gb,test_accuracy,windowed_accuracy"


def atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def history_csv(records) -> str:
    win = evalkit.windowed_accuracy([r.test_accuracy for r in records])
    lines = [CSV_HEADER]
    for r, w in zip(records, win):
        lines.append(f"{r.round},{r.cum_gflops:.6f},{r.cum_gb:.6f},"
                     f"{r.test_accuracy:.6f},{w:.6f}")
    return "\n".join(lines) + "\n"


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _apply_overrides(exp: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        exp = replace(exp, seed=args.seed)
    if getattr(args, "out", None) is not None:
        exp = replace(exp, out_dir=args.out)
    return exp


def cmd_run(args) -> int:
    exp = _apply_overrides(parse_config(args.config), args)
    history, summary = run_experiment(exp)
    os.makedirs(exp.out_dir, exist_ok=True)
    atomic_write(os.path.join(exp.out_dir, "history.csv"), history_csv(history))
    atomic_write(os.path.join(exp.out_dir, "summary.json"), _json(summary))
    print(f"{summary['method']}: final={summary['final_accuracy']:.4f} "
          f"gflops_to_target={summary['gflops_to_target']} "
          f"gb_to_target={summary['gb_to_target']}")
    return 0


_DATA_FIELDS = ("seed", "n_clients", "alpha", "samples_per_client", "classes", "dim",
                "train_per_class", "test_per_class", "separation",
                "train_path", "test_path")


def _data_key(exp: ExperimentConfig) -> tuple:
    return tuple(getattr(exp, f) for f in _DATA_FIELDS)


def _fmt_cost(v) -> str:
    return "FAIL" if v == "FAIL" else f"{v:.2f}"


def cmd_compare(args) -> int:
    exps = [parse_config(p) for p in args.configs]
    if len(exps) < 2:
        raise ConfigError("compare needs at least two configs")
    if len({_data_key(e) for e in exps}) != 1:
        raise ConfigError("compare requires identical data settings "
                          "(seed and [data] section) across configs")
    kinds = [e.algorithm.kind for e in exps]
    if len(set(kinds)) != len(kinds):
        raise ConfigError("compare requires distinct algorithms")
    out_dir = args.out or exps[0].out_dir
    data = build_data(exps[0])

    runs = {}
    for exp in exps:
        history, _ = run_experiment(exp, data=data)
        runs[exp.algorithm.kind] = history
    report = evalkit.build_report(runs, exps[0].flop_budget / 1e9,
                                  exps[0].byte_budget / 1e9)

    os.makedirs(out_dir, exist_ok=True)
    atomic_write(os.path.join(out_dir, "report.json"), _json(report))

    rows = [f"{'method':<10} {'final':>8} {'gflops':>12} {'gb':>12}"]
    for kind in kinds:
        m = report["methods"][kind]
        rows.append(f"{kind:<10} {m['final_accuracy']:>8.4f} "
                    f"{_fmt_cost(m['gflops_to_target']):>12} "
                    f"{_fmt_cost(m['gb_to_target']):>12}")
    rows.append(f"target accuracy: {report['target_accuracy']:.4f}")
    table = "\n".join(rows) + "\n"
    atomic_write(os.path.join(out_dir, "report.txt"), table)
    print(table, end="")

    target = report["target_accuracy"]
    for which, fname, xlabel in (("cum_gflops", "accuracy_vs_gflops.svg",
                                  "cumulative GFLOPs"),
                                 ("cum_gb", "accuracy_vs_gb.svg", "cumulative GB")):
        series = []
        for kind in kinds:
            recs = runs[kind]
            win = evalkit.windowed_accuracy([r.test_accuracy for r in recs])
            series.append((kind, [getattr(r, which) for r in recs], win))
        chart = svg.line_chart(series, xlabel, "windowed test accuracy",
                               target_y=target, log_x=True)
        atomic_write(os.path.join(out_dir, fname), chart)
    return 0


def _cell_label(exp: ExperimentConfig) -> str:
    a = exp.algorithm
    return (f"local_rounds={a.local_rounds},mu={a.mu},moon_tau={a.moon_tau},"
            f"adaptability={a.adaptability},lr={a.learning_rate}")


def cmd_sweep(args) -> int:
    spec = parse_sweep(args.config)
    if args.seed is not None:
        spec.base = replace(spec.base, seed=args.seed)
    out_dir = args.out or spec.base.out_dir
    cells = spec.cells()
    data = build_data(spec.base)

    def run_cell(exp):
        _, summary = run_experiment(exp, data=data)
        return summary

    workers = max(1, int(os.environ.get("FEDSIM_THREADS", os.cpu_count() or 1)))
    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(run_cell, cells))
    else:
        summaries = [run_cell(c) for c in cells]

    entries = []
    for exp, summary in zip(cells, summaries):
        entries.append({"cell": _cell_label(exp), "summary": summary,
                        "local_rounds": exp.algorithm.local_rounds,
                        "mu": exp.algorithm.mu})

    def best(metric: str, maximize: bool):
        def key(e):
            v = e["summary"][metric]
            if v == "FAIL":
                v = float("-inf") if maximize else float("inf")
            return (-v if maximize else v, e["local_rounds"], e["mu"])
        return min(entries, key=key)["cell"]

    result = {
        "algorithm": spec.base.algorithm.kind,
        "cells": entries,
        "best": {
            "accuracy": best("final_accuracy", maximize=True),
            "flops": best("gflops_to_target", maximize=False),
            "communication": best("gb_to_target", maximize=False),
        },
    }
    os.makedirs(out_dir, exist_ok=True)
    atomic_write(os.path.join(out_dir, "sweep.json"), _json(result))
    print(_json(result["best"]), end="")
    return 0


SIMILARITY_METHODS = ["fedavg", "fedprox", "ist", "istprox"]


def cmd_similarity(args) -> int:
    exp = _apply_overrides(parse_config(args.config), args)
    results = evalkit.run_similarity_study(exp, SIMILARITY_METHODS,
                                           n_checkpoints=args.checkpoints,
                                           fed_rounds=args.rounds)
    out_dir = exp.out_dir
    os.makedirs(out_dir, exist_ok=True)
    lines = ["epoch,method,similarity"]
    for method in SIMILARITY_METHODS:
        for epoch, sim in enumerate(results[method]["similarity"]):
            lines.append(f"{epoch},{method},{sim:.6f}")
    atomic_write(os.path.join(out_dir, "similarity.csv"), "\n".join(lines) + "\n")
    series = [(m, list(range(len(results[m]["smoothed"]))), results[m]["smoothed"])
              for m in SIMILARITY_METHODS]
    chart = svg.line_chart(series, "centralized training epoch",
                           "cosine similarity (smoothed)")
    atomic_write(os.path.join(out_dir, "similarity.svg"), chart)
    print(f"wrote {out_dir}/similarity.csv")
    return 0


def cmd_gen_data(args) -> int:
    train, test = generate_synthetic(args.classes, args.dim, args.train_per_class,
                                     args.test_per_class, args.separation,
                                     substream(args.seed, "data"))
    test_path = args.test_out
    if test_path is None:
        root, ext = os.path.splitext(args.out)
        test_path = root + ".test" + (ext or ".fvds")
    save_dataset(train, args.out)
    save_dataset(test, test_path)
    print(f"wrote {args.out} ({train.n} samples) and {test_path} ({test.n} samples)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedsim",
                                description="Deterministic federated learning simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run several methods on identical data")
    cmp_.add_argument("configs", nargs="+")
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)

    sweep = sub.add_parser("sweep", help="hyperparameter grid scan")
    sweep.add_argument("config")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--out")
    sweep.set_defaults(func=cmd_sweep)

    sim = sub.add_parser("similarity", help="descent-direction similarity study")
    sim.add_argument("config")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out")
    sim.add_argument("--checkpoints", type=int, default=20)
    sim.add_argument("--rounds", type=int, default=1)
    sim.set_defaults(func=cmd_similarity)

    gen = sub.add_parser("gen-data", help="write a synthetic feature dataset")
    gen.add_argument("--classes", type=int, default=20)
    gen.add_argument("--dim", type=int, default=64)
    gen.add_argument("--train-per-class", type=int, default=100)
    gen.add_argument("--test-per-class", type=int, default=50)
    gen.add_argument("--separation", type=float, default=3.0)
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--out", required=True)
    gen.add_argument("--test-out")
    gen.set_defaults(func=cmd_gen_data)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
