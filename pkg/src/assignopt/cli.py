"""Command-line front end.

Subcommands: ``gen``, ``solve``, ``round``, ``eval``, ``oracle`` and
``bench``.  Every file written gets a ``<file>.meta.json`` sidecar holding
the resolved configuration, so a run can be reproduced from its outputs.
Failures print one JSON line on stderr, ``{"error": <code>, "message": ...}``,
and exit with status 1; usage errors exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .admm import SolverConfig, solve
from .engine import make_engine
from .errors import AssignOptError
from .metrics import objective_apd, report
from .oracle import assignment_matrix, oracle_solve
from .problem import (
    DEFAULT_PARTITIONS,
    generate_synthetic,
    generate_uneven,
    load_problem,
    partition,
    read_matrix_csv,
    save_problem,
    write_matrix_csv,
)
from .rounding import read_assignment, round_solution, write_assignment
from .subsolver import solve_simplex_qp_batch

log = logging.getLogger("assignopt")

CHECKPOINT_EVERY = 25
OBJECTIVES = {"quad": "quadratic", "log": "logarithmic", "linear": "linear_separable"}


def _int_list(text):
    try:
        return [int(float(tok)) for tok in text.split(",") if tok]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _probability(text):
    p = float(text)
    if not 0.0 <= p < 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return p


def build_parser():
    ap = argparse.ArgumentParser(prog="assignopt", description="Bregman-ADMM solver for generalized assignment problems.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic problem directory")
    g.add_argument("--items", type=int, required=True)
    g.add_argument("--owners", type=int, required=True)
    g.add_argument("--m", type=int, default=3, help="number of inequality features")
    g.add_argument("--n", type=int, default=2, help="number of equality features")
    g.add_argument("--objective", choices=sorted(OBJECTIVES), default="quad")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--uneven", action="store_true", help="scale the second half of the items by 10")
    g.add_argument("--partitions", type=int, default=DEFAULT_PARTITIONS)
    g.add_argument("--out", required=True, help="problem directory")

    s = sub.add_parser("solve", help="run the ADMM solver")
    s.add_argument("--problem", required=True)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--trace", help="trace CSV path")
    s.add_argument("--out", help="solution CSV (default <problem>/solution.csv)")
    s.add_argument("--workers", type=int, default=1, help="0 runs the serial reference engine")
    s.add_argument("--inject-failure", type=_probability, default=0.0, metavar="P")
    s.add_argument("--seed", type=int, default=0, help="failure-injection seed")
    s.add_argument("--tol-ineq", type=float, default=1e-3)
    s.add_argument("--tol-eq", type=float, default=1e-3)
    s.add_argument("--tol-dual", type=float, default=1e-6)
    s.add_argument("--rho", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--checkpoint-every", type=int, default=CHECKPOINT_EVERY, help="0 disables checkpoints")
    s.add_argument("--resume", type=int, metavar="T", help="resume from the checkpoint of iteration T")

    r = sub.add_parser("round", help="sample a binary assignment from a relaxed solution")
    r.add_argument("--problem", required=True)
    r.add_argument("--x", required=True, help="relaxed solution CSV")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--repeats", type=int, default=1)
    r.add_argument("--out", required=True, help="assignment CSV")

    e = sub.add_parser("eval", help="metrics of a solution")
    e.add_argument("--problem", required=True)
    what = e.add_mutually_exclusive_group(required=True)
    what.add_argument("--x", help="relaxed solution CSV")
    what.add_argument("--assignment", help="assignment CSV from `round`")
    ref = e.add_mutually_exclusive_group()
    ref.add_argument("--oracle", action="store_true", help="compare against the reference oracle")
    ref.add_argument("--lower-bound", metavar="X_CSV", help="relaxed solution whose objective is the reference")
    ref.add_argument("--reference", type=float, help="reference objective value")
    e.add_argument("--out", help="report JSON (default stdout)")

    o = sub.add_parser("oracle", help="reference solve of the continuous relaxation")
    o.add_argument("--problem", required=True)
    o.add_argument("--out", help="solution CSV")

    b = sub.add_parser("bench", help="timing runs")
    bsub = b.add_subparsers(dest="target", required=True)
    bq = bsub.add_parser("subsolver", help="batched simplex-QP throughput")
    bq.add_argument("--j", type=int, default=10)
    bq.add_argument("--count", type=int, default=100_000)
    bq.add_argument("--seed", type=int, default=0)
    bq.add_argument("--out")
    bs = bsub.add_parser("solve", help="per-iteration wall time against I and worker count")
    bs.add_argument("--items", type=_int_list, default=[10_000, 100_000])
    bs.add_argument("--owners", type=int, default=10)
    bs.add_argument("--m", type=int, default=3)
    bs.add_argument("--n", type=int, default=2)
    bs.add_argument("--objective", choices=sorted(OBJECTIVES), default="quad")
    bs.add_argument("--workers", type=_int_list, default=[1, 4])
    bs.add_argument("--iters", type=int, default=10)
    bs.add_argument("--partitions", type=int, default=DEFAULT_PARTITIONS)
    bs.add_argument("--seed", type=int, default=0)
    bs.add_argument("--out")
    return ap


# --- helpers --------------------------------------------------------------

def _config(args):
    cfg = {k: v for k, v in vars(args).items() if not callable(v)}
    cfg["version"] = __version__
    return cfg


def write_meta(path, args, **extra):
    meta = {"config": _config(args), "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
    meta.update(extra)
    Path(f"{path}.meta.json").write_text(json.dumps(meta, indent=2, default=str))


def _emit(obj, out, args):
    text = json.dumps(obj, indent=2, default=float)
    if out:
        Path(out).write_text(text + "\n")
        write_meta(out, args)
    else:
        print(text)


def time_iterations(spec, workers, iters, **engine_kw):
    """Wall-clock milliseconds per ADMM iteration (after one warm-up)."""
    parts = partition(spec, spec.partitions)
    times = []
    last = [time.perf_counter()]

    def tick(state, trace):
        now = time.perf_counter()
        times.append((now - last[0]) * 1e3)
        last[0] = now

    with make_engine(parts, workers, **engine_kw) as engine:
        cfg = SolverConfig(max_iters=iters + 1, tol_ineq=0, tol_eq=0, tol_dual=0, trace_every=iters + 1)
        last[0] = time.perf_counter()
        solve(spec, cfg, engine=engine, callback=tick)
    return times[1:]


# --- subcommands ----------------------------------------------------------

def cmd_gen(args):
    kind = OBJECTIVES[args.objective]
    gen = generate_uneven if args.uneven else generate_synthetic
    spec = gen(args.items, args.owners, args.m, args.n, kind, args.seed, partitions=args.partitions)
    out = save_problem(spec, args.out)
    write_meta(Path(out) / "manifest.json", args)
    log.info("wrote problem I=%d J=%d M=%d N=%d to %s", *spec.shape, out)
    return 0


def cmd_solve(args):
    spec = load_problem(args.problem)
    ckpt_dir = Path(args.problem) / "checkpoints"
    config = SolverConfig(
        max_iters=args.iters,
        tol_ineq=args.tol_ineq,
        tol_eq=args.tol_eq,
        tol_dual=args.tol_dual,
        rho=args.rho,
        beta=args.beta,
        checkpoint_every=args.checkpoint_every or None,
        checkpoint_dir=str(ckpt_dir),
    )
    kw = {"checkpoint_dir": str(ckpt_dir)}
    if args.workers > 0:
        kw.update(failure_rate=args.inject_failure, seed=args.seed)
    elif args.inject_failure:
        raise AssignOptError("failure injection needs --workers >= 1")
    parts = partition(spec, spec.partitions)
    with make_engine(parts, args.workers, **kw) as engine:
        X, trace = solve(spec, config, engine=engine, resume_from=args.resume)
    out = args.out or str(Path(args.problem) / "solution.csv")
    write_matrix_csv(out, X)
    write_meta(out, args, iterations=trace.final_state.t)
    if args.trace:
        trace.to_csv(args.trace)
        write_meta(args.trace, args)
    last = trace.rows[-1] if trace.rows else None
    summary = {"iterations": trace.final_state.t, "solution": out}
    if last is not None:
        summary.update(dict(zip(("objective", "ineq_mapd", "eq_mapd", "dual_residual"), last[1:5])))
    print(json.dumps(summary))
    return 0


def cmd_round(args):
    spec = load_problem(args.problem)
    X = read_matrix_csv(args.x, spec.num_owners)
    owner = round_solution(X, args.seed, repeats=args.repeats, spec=spec)
    write_assignment(args.out, owner)
    write_meta(args.out, args)
    return 0


def cmd_eval(args):
    spec = load_problem(args.problem)
    if args.x:
        X = read_matrix_csv(args.x, spec.num_owners)
    else:
        X = assignment_matrix(read_assignment(args.assignment), spec.num_owners)
    reference = args.reference
    if args.oracle:
        reference = oracle_solve(spec).objective
    elif args.lower_bound:
        reference = spec.objective.f_eval(spec.omega, read_matrix_csv(args.lower_bound, spec.num_owners))
    rep = report(spec, X, reference)
    if reference is not None:
        rep.objective_apd = objective_apd(rep.objective, reference)
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
        write_meta(args.out, args)
    else:
        print(text)
    return 0


def cmd_oracle(args):
    spec = load_problem(args.problem)
    sol = oracle_solve(spec)
    if args.out:
        write_matrix_csv(args.out, sol.X)
        write_meta(args.out, args, objective=sol.objective, kkt=sol.kkt)
    print(json.dumps({"objective": sol.objective, "kkt": sol.kkt, "newton_steps": sol.newton_steps}))
    return 0


def cmd_bench(args):
    if args.target == "subsolver":
        rng = np.random.default_rng(args.seed)
        gamma = rng.uniform(0.1, 10.0, (args.count, args.j))
        eta = rng.normal(0.0, 5.0, (args.count, args.j))
        solve_simplex_qp_batch(gamma[:100], eta[:100])
        t0 = time.perf_counter()
        solve_simplex_qp_batch(gamma, eta)
        elapsed = time.perf_counter() - t0
        result = {"j": args.j, "count": args.count, "seconds": elapsed, "us_per_instance": elapsed / args.count * 1e6}
        _emit(result, args.out, args)
        return 0

    rows = []
    kind = OBJECTIVES[args.objective]
    for I in args.items:
        spec = generate_synthetic(I, args.owners, args.m, args.n, kind, args.seed, partitions=args.partitions)
        for w in args.workers:
            times = time_iterations(spec, w, args.iters)
            rows.append({"items": I, "workers": w, "ms_per_iter": float(np.median(times))})
            log.info("I=%d workers=%d: %.1f ms/iter", I, w, rows[-1]["ms_per_iter"])
    _emit({"runs": rows}, args.out, args)
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "solve": cmd_solve,
    "round": cmd_round,
    "eval": cmd_eval,
    "oracle": cmd_oracle,
    "bench": cmd_bench,
}


def _setup_logging():
    level = os.environ.get("ASSIGN_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging()
    log.info("resolved config: %s", json.dumps(_config(args), default=str))
    try:
        return COMMANDS[args.command](args)
    except (AssignOptError, OSError, ValueError) as exc:
        code = getattr(exc, "code", None) or type(exc).__name__
        print(json.dumps({"error": code, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
