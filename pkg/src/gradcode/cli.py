"""Command-line entry point: simulate, analyze, verify, shard, master, worker.

Set ``GRADCODE_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to control logging.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from pathlib import Path

from . import analysis, config as config_mod, straggler, verify
from .errors import ConfigError, DataError, DomainError, GradCodeError, ParameterError

log = logging.getLogger("gradcode")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _load_config(path):
    try:
        return config_mod.load(path)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None


def parse_seeds(text: str) -> list[int]:
    """``"7"`` -> [7]; ``"0..199"`` -> [0, ..., 199] (inclusive)."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def _floats(text):
    return [float(v) for v in text.split(",")]


def _ints(text):
    return [int(v) for v in text.split(",")]


def cmd_simulate(args) -> int:
    from .simulator import run_experiment, summarize

    cfg = _load_config(args.config)
    seeds = parse_seeds(args.seeds) if args.seeds else [cfg.seed]
    out = Path(args.out or cfg.output or "results")
    out.mkdir(parents=True, exist_ok=True)
    from .data import build_objective

    objective = build_objective(cfg)
    results = []
    for seed in seeds:
        run_cfg = cfg.replace(seed=seed)
        result = run_experiment(run_cfg, objective)
        digest = run_cfg.digest()
        result.write_json(out / f"run_seed{seed}.json")
        result.write_csv(out / f"run_seed{seed}.csv", digest)
        results.append(result)
    summary = summarize(results, threshold=args.threshold)
    summary.write_csv(out / "summary.csv", cfg.digest())
    msg = f"{len(results)} run(s) written to {out}"
    if summary.time_to_threshold is not None:
        msg += f"; mean time to loss <= {args.threshold}: {summary.time_to_threshold:.6g}"
    print(msg)
    return EXIT_OK


ANALYZE_COLUMNS = ("method", "c", "delta", "r", "p", "q", "eps0", "E_iter_time",
                   "E_iter_time_block_max", "iter_time_bound", "E_time_bound", "flag")


def analyze_rows(n, k, cs, deltas, lam=None, constants=None, delta0=None, eps=None):
    rows = []

    def fmt(v):
        return "" if v is None else repr(float(v))

    def time_bound(method, c, delta):
        if constants is None or delta0 is None or eps is None:
            return None, ""
        try:
            return analysis.expected_time_to_eps(method, constants, n, c, delta, delta0, eps), ""
        except DomainError as exc:
            if "noise floor" in str(exc):
                return None, "eps_below_noise_floor"
            return None, "outside_model"

    for c in sorted(set(cs)):
        lam_c = lam if lam is not None else 1.0 / c
        ell = k * c // n
        egc_time = straggler.expected_runtime_egc(n, c, lam_c) if n == k else None
        egc_max = straggler.expected_block_max_runtime(n, c, lam_c) if n == k else None
        bound, flag = time_bound("egc", c, None)
        rows.append(("egc", c, None, k, 0.0, 0.0, None, egc_time, egc_max,
                     analysis.time_per_iteration_bound("egc", n, c), bound, flag))
        for delta in sorted(set(deltas)):
            r = max(1, math.ceil(delta * k - 1e-9))
            mom = analysis.moments_exact(k, ell, r)
            eps0 = analysis.noise_floor(constants, n, c, r) if constants is not None else None
            agc_time = straggler.expected_runtime_agc(n, c, r, lam_c) if n == k else None
            per_iter = analysis.time_per_iteration_bound("agc", n, c, delta) if delta < 1 else None
            bound, flag = time_bound("agc", c, delta) if delta < 1 else (None, "delta_is_1")
            if eps is not None and eps0 is not None and eps < eps0:
                flag = "eps_below_noise_floor"
            rows.append(("agc", c, delta, r, mom.p, mom.q, eps0, agc_time, None, per_iter, bound, flag))
    c0 = min(cs)
    lam_u = lam if lam is not None else 1.0 / c0
    bound, flag = time_bound("uncoded", c0, None)
    rows.append(("uncoded", c0, None, k, 0.0, 0.0, None,
                 straggler.expected_runtime_uncoded(n, lam_u) if n == k else None, None,
                 analysis.time_per_iteration_bound("uncoded", n, c0), bound, flag))
    rows.sort(key=lambda row: (row[0], row[1], -1 if row[2] is None else row[2]))
    return [[row[0], row[1], fmt(row[2]), row[3], *(fmt(v) for v in row[4:11]), row[11]]
            for row in rows]


def cmd_analyze(args) -> int:
    k = args.k or args.n
    constants = None
    if args.mu is not None:
        constants = analysis.ProblemConstants(args.mu, args.beta or args.mu, args.sigma or 0.0)
    rows = analyze_rows(args.n, k, _ints(args.c), _floats(args.delta), args.lam, constants,
                        args.delta0, args.eps)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(ANALYZE_COLUMNS)
        writer.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_verify(args) -> int:
    minimum = verify.MIN_BUDGET[args.suite]
    if args.budget is not None and args.budget < minimum:
        print(f"budget for {args.suite} must be >= {minimum}", file=sys.stderr)
        return EXIT_USAGE
    kwargs = {}
    if args.corrupt_bound:
        if args.suite != "convergence":
            print("--corrupt-bound only applies to the convergence suite", file=sys.stderr)
            return EXIT_USAGE
        kwargs["bound_scale"] = 1e-3
    checks = verify.run_suite(args.suite, args.budget, **kwargs)
    for check in checks:
        print(check.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    for c in failed:
        print(f"violated: {c.name}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_shard(args) -> int:
    from .data import shard

    manifest = shard(args.dataset, args.label_column, args.n, args.k or args.n, args.c, args.out,
                     args.objective, args.standardize)
    print(f"wrote {manifest['n']} task files ({manifest['rows_per_task']} rows each) to {args.out}")
    return EXIT_OK


def cmd_master(args) -> int:
    from .net import serve_master

    cfg = _load_config(args.config)
    result = serve_master(cfg, args.listen, ready=lambda addr: log.info("listening on %s:%d", *addr))
    out = Path(args.out or cfg.output or "results")
    out.mkdir(parents=True, exist_ok=True)
    result.write_json(out / f"master_seed{cfg.seed}.json")
    result.write_csv(out / f"master_seed{cfg.seed}.csv", cfg.digest())
    print(f"{len(result.records)} rounds, total time {result.total_time:.4f}s, final loss {result.final_loss:.6g}")
    return EXIT_OK


def cmd_worker(args) -> int:
    from .net import worker as worker_mod

    delay = None
    if args.delay_table:
        delay = worker_mod.table_delays(worker_mod.read_delay_table(args.delay_table), args.time_scale)
    elif args.delay_seed is not None:
        delay = worker_mod.seeded_delays(args.delay_seed, args.delay_lambda, args.time_scale)
    return worker_mod.run_worker(args.master, args.data, args.worker_id, delay=delay,
                                 retries=args.retries)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradcode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replay training runs in the straggler simulator")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", help="seed list: 7, 1,2,3 or 0..199")
    p.add_argument("--out")
    p.add_argument("--threshold", type=float, help="loss level for time-to-threshold")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="tabulate moments, noise floors and time bounds")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--c", default="1", help="comma-separated tasks per worker")
    p.add_argument("--delta", default="0.5", help="comma-separated wait fractions")
    p.add_argument("--lam", type=float, help="straggling parameter (default 1/c)")
    p.add_argument("--mu", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--delta0", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="run an oracle suite")
    p.add_argument("--suite", choices=verify.SUITES, required=True)
    p.add_argument("--budget", type=int)
    p.add_argument("--corrupt-bound", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("shard", help="split a CSV dataset into per-task files")
    p.add_argument("--dataset", required=True)
    p.add_argument("--label-column", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int, default=1)
    p.add_argument("--objective", choices=("least_squares", "logistic"), default="least_squares")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shard)

    p = sub.add_parser("master", help="run the parameter server")
    p.add_argument("--config", required=True)
    p.add_argument("--listen", default="127.0.0.1:7000")
    p.add_argument("--out")
    p.set_defaults(func=cmd_master)

    p = sub.add_parser("worker", help="run one worker")
    p.add_argument("--master", required=True)
    p.add_argument("--worker-id", type=int, required=True)
    p.add_argument("--data", required=True, help="shard directory or experiment config file")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--delay-seed", type=int)
    group.add_argument("--delay-table")
    p.add_argument("--delay-lambda", type=float, default=0.5)
    p.add_argument("--time-scale", type=float, default=1.0)
    p.add_argument("--retries", type=int, default=5)
    p.set_defaults(func=cmd_worker)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GRADCODE_LOG_LEVEL", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GradCodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
