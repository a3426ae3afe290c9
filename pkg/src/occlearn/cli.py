"""``occ-learn`` command line.

Subcommands:
  generate                 write a synthetic dataset
  run                      run one algorithm and print a summary
  experiment rejections    first-iteration rejection counts over an (N, Pb) grid
  experiment scaling       fixed Pb, varying P: master and worker loads per epoch
  verify                   serializability check of one configuration

Exit codes: 0 success, 1 invalid arguments, 2 verification failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import io
from .bpmeans import bp_objective, parallel_bpmeans
from .datagen import GENERATORS, GenConfig
from .dpmeans import dp_objective, parallel_dpmeans
from .engine import partition_epochs
from .experiments import (ALGORITHMS, DATA_MODES, DEFAULT_DATA_MODE, ExperimentGrid, rejection_slope,
                          run_rejection_experiment, run_scaling, summarize)
from .ofl import ofl_objective, parallel_ofl
from .stream import UniformStream
from .verify import verify_serializability

log = logging.getLogger("occlearn")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2

# Scaling presets: DP-means and OFL were scaled at lambda 2, BP-means at 1.
SCALING_LAMBDA = {"dpmeans": 2.0, "ofl": 2.0, "bpmeans": 1.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _add_data_args(p, default_mode=None):
    g = p.add_argument_group("data (a file, or synthetic)")
    g.add_argument("--data", help="dataset file written by 'generate'")
    g.add_argument("--mode", choices=DATA_MODES, default=default_mode,
                   help="synthetic generator when --data is not given")
    g.add_argument("-n", "--n-points", type=_positive_int, default=1024)
    g.add_argument("--dim", type=_positive_int, default=16)
    g.add_argument("--theta", type=_positive_float, default=1.0)
    g.add_argument("--data-seed", type=int, default=None, help="defaults to --seed")


def _load_data(args, algorithm) -> np.ndarray:
    if args.data:
        try:
            return io.load_dataset(args.data)
        except (OSError, ValueError) as exc:
            raise UsageError(str(exc)) from None
    mode = args.mode or DEFAULT_DATA_MODE[algorithm]
    seed = args.seed if args.data_seed is None else args.data_seed
    return GENERATORS[mode](GenConfig(args.n_points, args.dim, args.theta, seed=seed)).points


def _add_run_args(p):
    p.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=1.0)
    p.add_argument("--processors", type=_positive_int, default=1)
    p.add_argument("--block-size", type=_positive_int, default=None, help="defaults to N / P")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=_positive_int, default=100)
    p.add_argument("--bootstrap", action="store_true",
                   help="process the first Pb/16 points serially before the epochs start")
    p.add_argument("--workers", type=_positive_int, default=1, help="threads used for block analysis")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occ-learn", description="Optimistic concurrency control for DP-means, OFL and BP-means.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--mode", choices=DATA_MODES, default="mixture")
    p.add_argument("-n", "--n-points", type=_positive_int, required=True)
    p.add_argument("--dim", type=_positive_int, default=16)
    p.add_argument("--theta", type=_positive_float, default=1.0)
    p.add_argument("--noise-sd", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)

    p = sub.add_parser("run", help="run one algorithm")
    _add_run_args(p)
    _add_data_args(p)
    p.add_argument("--check-serial", action="store_true", help="also run the serializability oracle")
    p.add_argument("--trace", help="write per-point trace CSV here")
    p.add_argument("--output", help="write centers/features here (dataset format)")

    p = sub.add_parser("verify", help="serializability check")
    _add_run_args(p)
    _add_data_args(p)
    p.add_argument("--skip-validation", action="store_true",
                   help="negative control: accept every proposal unchecked")

    exp = sub.add_parser("experiment", help="experiment harnesses").add_subparsers(dest="experiment", required=True)
    p = exp.add_parser("rejections", help="first-iteration rejections over an (N, Pb) grid")
    p.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    p.add_argument("--data-mode", choices=DATA_MODES, default=None)
    p.add_argument("--n-values", type=_int_list, default=list(range(256, 2561, 256)))
    p.add_argument("--pb-values", type=_int_list, default=[16, 32, 64, 128, 256])
    p.add_argument("--trials", type=_positive_int, default=400)
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=1.0)
    p.add_argument("--dim", type=_positive_int, default=16)
    p.add_argument("--theta", type=_positive_float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="-", help="CSV path, '-' for stdout")

    p = exp.add_parser("scaling", help="fixed Pb, P in a list, b = Pb / P")
    p.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    p.add_argument("--lambda", dest="lam", type=_positive_float, default=None,
                   help="defaults to 2 for dpmeans/ofl and 1 for bpmeans")
    p.add_argument("--pb", type=_positive_int, default=256)
    p.add_argument("--processors", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--iters", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bootstrap", action="store_true")
    _add_data_args(p)
    p.add_argument("--output", default="-", help="CSV path, '-' for stdout")
    return parser


def _plan(args, n):
    b = args.block_size or max(1, -(-n // args.processors))
    return partition_epochs(n, args.processors, b)


def cmd_generate(args) -> int:
    cfg = GenConfig(args.n_points, args.dim, args.theta, args.noise_sd, args.seed)
    io.save_dataset(args.output, GENERATORS[args.mode](cfg).points)
    print(f"wrote {args.n_points} x {args.dim} {args.mode} points to {args.output}")
    return EXIT_OK


def _print_epochs(traces):
    for it, tr in enumerate(traces):
        counts = " ".join(f"{e.proposals_sent}/{e.accepted}" for e in tr.epochs)
        print(f"iteration {it}: proposed {tr.n_proposed} accepted {tr.n_accepted} "
              f"rejected {tr.n_rejected}; per epoch proposed/accepted: {counts}")


def cmd_run(args) -> int:
    X = _load_data(args, args.algorithm)
    plan = _plan(args, len(X))
    print(f"{args.algorithm} N={len(X)} D={X.shape[1]} lambda={args.lam} "
          f"P={plan.n_processors} b={plan.block_size} epochs={plan.n_epochs}")
    if args.algorithm == "dpmeans":
        state, traces = parallel_dpmeans(X, args.lam, plan, args.iters, bootstrap=args.bootstrap,
                                         workers=args.workers, record_assignments=False)
        print(f"J={dp_objective(X, state.centers, args.lam)!r} K={state.n_centers} "
              f"iterations={state.n_iters} converged={state.converged}")
        out = state.centers
    elif args.algorithm == "bpmeans":
        model, traces = parallel_bpmeans(X, args.lam, plan, args.iters, bootstrap=args.bootstrap,
                                         workers=args.workers, record_assignments=False)
        print(f"objective={bp_objective(X, model)!r} K={model.n_features} "
              f"iterations={model.n_iters} converged={model.converged}")
        out = model.features
    else:
        res, tr = parallel_ofl(X, args.lam, plan, UniformStream(args.seed), workers=args.workers,
                               record_assignments=False)
        traces = [tr]
        print(f"J={ofl_objective(X, res.centers, args.lam)!r} K={res.n_centers}")
        out = res.centers
    _print_epochs(traces)
    if args.trace:
        io.write_trace(args.trace, traces)
    if args.output:
        io.save_dataset(args.output, out)
    if args.check_serial:
        rep = verify_serializability(args.algorithm, X, args.lam, plan.n_processors, plan.block_size,
                                     args.seed, max_iters=args.iters, bootstrap=args.bootstrap)
        print(rep.summary())
        if not rep.passed:
            return EXIT_VERIFY
    return EXIT_OK


def cmd_verify(args) -> int:
    X = _load_data(args, args.algorithm)
    plan = _plan(args, len(X))
    rep = verify_serializability(args.algorithm, X, args.lam, plan.n_processors, plan.block_size,
                                 args.seed, max_iters=args.iters, bootstrap=args.bootstrap,
                                 skip_validation=args.skip_validation, workers=args.workers)
    print(rep.summary())
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_rejections(args) -> int:
    try:
        grid = ExperimentGrid(tuple(args.n_values), tuple(args.pb_values), args.trials, args.algorithm,
                              args.data_mode, args.lam, args.dim, args.theta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    records = run_rejection_experiment(grid, args.seed, progress=log.info)
    io.write_rejections(args.output, records)
    for cell in summarize(records):
        log.info("Pb=%d N=%d mean rejected %.3f (se %.3f)", cell.pb, cell.n, cell.mean_rejected, cell.se_rejected)
    if len(grid.n_values) >= 3:
        for pb in grid.pb_values:
            fit = rejection_slope(records, pb)
            log.info("Pb=%d slope %.3g per point, 95%% CI [%.3g, %.3g]", pb, fit.slope, fit.low, fit.high)
    return EXIT_OK


def cmd_scaling(args) -> int:
    bad = [p for p in args.processors if p < 1 or args.pb % p]
    if bad:
        raise UsageError(f"Pb={args.pb} must be divisible by every P; offending: {bad}")
    X = _load_data(args, args.algorithm)
    lam = args.lam if args.lam is not None else SCALING_LAMBDA[args.algorithm]
    res = run_scaling(args.algorithm, X, lam, args.pb, args.processors, args.iters, args.seed, args.bootstrap)
    io.write_scaling(args.output, res.rows)
    for p in args.processors:
        log.info("P=%d wall %.3fs, points per worker per iteration %s", p, res.wall_s[p], res.worker_totals[p])
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "experiment":
        handler = cmd_rejections if args.experiment == "rejections" else cmd_scaling
    else:
        handler = COMMANDS[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"occ-learn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
