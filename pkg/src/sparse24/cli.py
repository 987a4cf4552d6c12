"""Command-line entry point.

Subcommands: train, compare, search-lambda, bench-spmm, bench-geglu,
bench-masksearch, gen-patterns, verify.  All file outputs are CSV or
JSON; every subcommand is reproducible under a fixed seed except the
wall-clock fields of benchmark reports.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import backend
from .bench import bench_geglu, bench_masksearch, bench_spmm, rows_to_csv
from .optim import DEFAULT_LAMBDA_GRID, decay_factor_search
from .sparsity import enumerate_patterns
from .trainer import TrainConfig, make_warmup_runner, run_comparison, run_training


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparse24",
        description="2:4 fully sparse training toolkit (backend: %s)" % backend.BACKEND,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="path to a TrainConfig JSON file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--precision", choices=("f32", "f64"), default="f64",
                       help="arithmetic width for benchmarks (training is f64)")
        return p

    add("train", "run one training configuration")
    add("compare", "run the baseline/ablation variants and report")
    p = add("search-lambda", "grid-search the masked-decay factor on a warmup")
    p.add_argument("--warmup", type=int, default=300, help="warmup steps per candidate")
    p.add_argument("--candidates", help="comma-separated decay factors")
    add("bench-spmm", "time dense vs simulated-sparse multiplies")
    add("bench-geglu", "time gate-stage traversal orders")
    add("bench-masksearch", "time exhaustive vs greedy mask search")
    add("gen-patterns", "write the canonical 4x4 pattern table")
    add("verify", "run the headless property suite")
    return parser


def _load_config(args) -> TrainConfig:
    if not args.config:
        raise FileNotFoundError("missing --config")
    if not os.path.exists(args.config):
        raise FileNotFoundError(f"config file not found: {args.config}")
    cfg = TrainConfig.from_json_file(args.config)
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _outdir(args, default: str) -> str:
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


def _write(path: str, text: str) -> None:
    with open(path, "w") as f:
        f.write(text)


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    art = run_training(cfg)
    out = _outdir(args, "train_out")
    art.save(out)
    print(f"final_eval_loss={art.final_eval_loss:.6g} (artifacts in {out})")
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    report = run_comparison(cfg)
    out = _outdir(args, "compare_out")
    _write(os.path.join(out, "comparison.json"), report.to_json())
    for name, art in report.runs.items():
        art.save(os.path.join(out, name))
    for name, row in report.summary().items():
        print(f"{name}: eval={row['final_eval_loss']:.6g} "
              f"tail_flips={row['tail_flip_mean']:.4g}")
    return 0


def _cmd_search_lambda(args) -> int:
    cfg = _load_config(args)
    if args.candidates:
        candidates = [float(tok) for tok in args.candidates.split(",") if tok]
    else:
        candidates = list(DEFAULT_LAMBDA_GRID)
    runner = make_warmup_runner(cfg, args.warmup)
    result = decay_factor_search(candidates, args.warmup, runner)
    out = _outdir(args, "search_out")
    _write(os.path.join(out, "lambda_report.csv"), result.to_csv())
    for e in result.entries:
        flag = " (accuracy risk)" if e.accuracy_risk else ""
        print(f"lambda={e.lambda_w:g} mu={e.mu:.4g} feasible={e.feasible}{flag}")
    if result.chosen is None:
        print("no feasible decay factor in the candidate set")
        return 3
    print(f"chosen lambda={result.chosen:g}")
    return 0


def _cmd_bench(args, kind: str) -> int:
    if kind == "spmm":
        rows, fname = bench_spmm(precision=args.precision), "spmm_bench.csv"
    elif kind == "geglu":
        rows, fname = bench_geglu(precision=args.precision), "geglu_bench.csv"
    else:
        rows, fname = bench_masksearch(), "masksearch_bench.csv"
    csv = rows_to_csv(rows)
    print(csv, end="")
    if args.out:
        _write(os.path.join(_outdir(args, "bench_out"), fname), csv)
    return 0


def _cmd_gen_patterns(args) -> int:
    text = enumerate_patterns().to_text()
    if args.out:
        _write(os.path.join(_outdir(args, "patterns_out"), "patterns.txt"), text)
        print(f"wrote {len(text.splitlines())} patterns")
    else:
        print(text, end="")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_all

    failures = run_all(seed=args.seed if args.seed is not None else 0)
    print(f"backend={backend.BACKEND} failures={failures}")
    return 1 if failures else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "search-lambda":
            return _cmd_search_lambda(args)
        if args.command == "bench-spmm":
            return _cmd_bench(args, "spmm")
        if args.command == "bench-geglu":
            return _cmd_bench(args, "geglu")
        if args.command == "bench-masksearch":
            return _cmd_bench(args, "masksearch")
        if args.command == "gen-patterns":
            return _cmd_gen_patterns(args)
        if args.command == "verify":
            return _cmd_verify(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    raise SystemExit(main())
