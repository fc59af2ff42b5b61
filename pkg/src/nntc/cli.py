"""Command-line front end: ``nntc generate | solve | eval | bench``.

Exit codes: 0 success, 1 input error, 2 solve did not converge (the model
is still written), 3 the exact oracle ran out of nodes.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as nio
from .bcg import SolverConfig, solve
from .experiments import (DEFAULT_BENCH_CAP, BenchCell, generate_ground_truth, nmse,
                          run_benchmark, sample_observations, summarize, write_csv)
from .oracle import ResourceExhausted
from .tensor import DEFAULT_DENSE_CAP, Shape

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NOT_CONVERGED = 2
EXIT_EXHAUSTED = 3

SEED_ENV = "NNTC_SEED"

log = logging.getLogger("nntc")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # Usage errors share the input-error exit code; 2 means "not converged".
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def parse_shape(text: str) -> Shape:
    try:
        return Shape(tuple(int(t) for t in text.split(",")))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}: {exc}") from None


def _seed(flag_value: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return flag_value
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV}={env!r} is not an integer") from None


_CELL_KEYS = {"shape", "atoms", "n", "methods", "reps", "seeds", "epsilon"}


def parse_bench_spec(text: str, path="<spec>") -> list[BenchCell]:
    """Cells are blocks of ``key=value`` lines separated by blank lines; ``#`` starts a comment."""
    cells, block = [], {}

    def flush(lineno):
        if not block:
            return
        if "shape" not in block:
            raise nio.ParseError(path, lineno, "cell has no 'shape'")
        try:
            shape = parse_shape(block["shape"])
            kw = {"shape": shape}
            if "atoms" in block:
                kw["num_atoms"] = int(block["atoms"])
            if "n" in block:
                kw["n"] = int(block["n"])
            if "methods" in block:
                kw["methods"] = tuple(m.strip() for m in block["methods"].split(",") if m.strip())
            if "reps" in block:
                kw["reps"] = int(block["reps"])
            if "seeds" in block:
                kw["seeds"] = tuple(int(s) for s in block["seeds"].split(","))
            if "epsilon" in block:
                kw["epsilon"] = float(block["epsilon"])
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise nio.ParseError(path, lineno, str(exc)) from None
        bad = set(kw.get("methods", ())) - {"bcg", "als"}
        if bad:
            raise nio.ParseError(path, lineno, f"unknown methods {sorted(bad)}")
        cells.append(BenchCell(**kw))
        block.clear()

    lineno = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            if not raw.strip():
                flush(lineno)
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CELL_KEYS:
            raise nio.ParseError(path, lineno, f"expected one of {sorted(_CELL_KEYS)} as key=value")
        if key in block:
            raise nio.ParseError(path, lineno, f"duplicate key {key!r}")
        block[key] = value.strip()
    flush(lineno + 1)
    return cells


def cmd_generate(args) -> int:
    seed = _seed(args.seed)
    if args.n < 1:
        raise InputError("--n must be at least 1")
    rng = np.random.default_rng(seed)
    gt = generate_ground_truth(args.shape, args.atoms, rng, cap=args.dense_cap)
    obs = sample_observations(gt, args.n, rng)
    nio.write_observations(args.out, obs)
    if args.truth_out:
        if gt.dense is None:
            log.warning("shape %s exceeds the dense cap; no truth file written", args.shape)
        else:
            nio.write_dense(args.truth_out, gt.dense)
    return EXIT_OK


def _write_stats(path, record: dict):
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    obs = nio.read_observations(args.input)
    config = SolverConfig(epsilon=args.epsilon, K=args.K, am_restarts=args.restarts,
                          seed=_seed(args.seed), max_iterations=args.max_iterations,
                          bb_node_budget=args.node_budget, descent=args.descent)
    try:
        model, stats = solve(obs, args.lam, config)
    except ResourceExhausted as exc:
        print(f"error: {exc}", file=sys.stderr)
        _write_stats(args.stats_out, {"converged": False, "resource_exhausted": True,
                                      "bb_nodes": exc.nodes, "dual_bound": exc.dual_bound})
        return EXIT_EXHAUSTED
    nio.write_model(args.model_out, model)
    record = stats.as_dict(history=args.history)
    record["num_atoms"] = len(model.atoms)
    _write_stats(args.stats_out, record)
    return EXIT_OK if stats.converged else EXIT_NOT_CONVERGED


def format_nmse(value: float) -> str:
    return f"{value:#.7g}"


def cmd_eval(args) -> int:
    model = nio.read_model(args.model)
    truth = nio.read_dense(args.truth)
    if model.shape.dims != truth.shape:
        raise InputError(f"model shape {model.shape} does not match truth shape "
                         f"{Shape(truth.shape)}")
    print(format_nmse(nmse(model, truth)))
    return EXIT_OK


def cmd_bench(args) -> int:
    path = Path(args.spec)
    cells = parse_bench_spec(path.read_text(encoding="utf-8"), path)
    results = run_benchmark(cells, master_seed=_seed(args.master_seed),
                            parallelism=args.parallelism, large_scale=args.large_scale,
                            bench_cap=args.bench_cap)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_csv(results, fh, include_time=not args.no_timing)
    else:
        write_csv(results, sys.stdout, include_time=not args.no_timing)
    for (method, shape, n), s in summarize(results).items():
        print(f"{method} {shape} n={n}: nmse {s['nmse_mean']:.4g} +- {s['nmse_se']:.2g}, "
              f"time {s['time_mean']:.3g} s ({s['failed']} failed of {s['runs']})",
              file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nntc", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="random nonnegative truth and sampled observations")
    g.add_argument("--shape", type=parse_shape, required=True, help="comma-separated dims, e.g. 10,10,10")
    g.add_argument("--atoms", type=int, default=10)
    g.add_argument("--n", type=int, required=True, help="number of samples (with replacement)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="observation file")
    g.add_argument("--truth-out", help="dense truth file")
    g.add_argument("--dense-cap", type=int, default=DEFAULT_DENSE_CAP)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="fit a model to an observation file")
    s.add_argument("--input", required=True)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--epsilon", type=float, default=1e-6)
    s.add_argument("--K", type=float, default=2.0)
    s.add_argument("--restarts", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iterations", type=int, default=10_000)
    s.add_argument("--node-budget", type=int, default=10**7)
    s.add_argument("--descent", choices=["affine", "projected_gradient"], default="affine")
    s.add_argument("--model-out", required=True)
    s.add_argument("--stats-out", help="JSON stats file (default: stdout)")
    s.add_argument("--history", action="store_true", help="include the per-iteration loss")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="NMSE of a model against a dense truth file")
    e.add_argument("--model", required=True)
    e.add_argument("--truth", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run a benchmark sweep and write CSV")
    b.add_argument("--spec", required=True, help="key=value cells separated by blank lines")
    b.add_argument("--out", help="CSV file (default: stdout)")
    b.add_argument("--master-seed", type=int, default=0)
    b.add_argument("--parallelism", type=int, default=1)
    b.add_argument("--large-scale", action="store_true")
    b.add_argument("--bench-cap", type=int, default=DEFAULT_BENCH_CAP)
    b.add_argument("--no-timing", action="store_true", help="write time_s as 0 for diffable output")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, nio.ParseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
