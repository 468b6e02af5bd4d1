"""Command-line front end: ``piccap {binomial,pic,binary,ellipsoid} ...``.

Exit status is 0 on success, 1 when a solver fails and 2 on bad arguments.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from typing import Optional, Sequence

import numpy as np

from .channels import ChannelDomainError, PicParams, TransportModel, binomial_channel, derive_state
from .closed_form import summarize
from .dab import BIRTH_RULES, STRATEGIES, DabConfig, DabError, dab_solve
from .ellipsoid import EllipsoidError, solve_dual
from .sweep import SweepError, export, find_optimal_rho, sweep_binomial, sweep_pic

EXIT_OK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2


def _positive(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def _probability(text):
    value = _positive(text)
    if value > 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return value


def _add_output(p):
    p.add_argument("--out", help="write the sweep to this path (CSV plus <out>.support.csv, or JSON)")
    p.add_argument("--format", choices=("csv", "json"),
                   help="output format; inferred from the --out suffix when omitted")
    p.add_argument("--trace", help="write per-iteration JSON-lines diagnostics to this path")


def _add_pic_params(p):
    p.add_argument("--alpha", type=_probability, required=True, help="release efficiency")
    p.add_argument("--beta", type=_probability, required=True, help="detection efficiency")
    p.add_argument("--lambda", dest="lam", type=_positive, required=True,
                   help="particle generation rate (particles per second)")
    p.add_argument("--c", type=_positive, required=True, help="Levy scale (seconds)")
    p.add_argument("--eta", type=_probability, required=True, help="total arrival probability")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="piccap", description="Capacity of binomial and particle-intensity channels.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("binomial", help="capacity sweep of the binomial channel over n")
    b.add_argument("--n-min", type=_positive_int, default=1)
    b.add_argument("--n-max", type=_positive_int, required=True)
    b.add_argument("--epsilon", type=_positive, default=1e-6, help="certificate gap (bits)")
    _add_output(b)

    p = sub.add_parser("pic", help="information-rate sweep of the PIC over rho")
    _add_pic_params(p)
    p.add_argument("--rho-min", type=_positive, required=True)
    p.add_argument("--rho-max", type=_positive, required=True)
    p.add_argument("--rho-steps", type=_positive_int, default=40)
    p.add_argument("--epsilon", type=_positive, default=1e-5, help="certificate gap (bits)")
    p.add_argument("--strategy", choices=STRATEGIES, default="max_derivative")
    p.add_argument("--birth-rule", choices=BIRTH_RULES, default="negligible_rate")
    p.add_argument("--refine", action="store_true",
                   help="refine the optimal rho by golden-section search")
    p.add_argument("--cold", action="store_true", help="solve every rho from a cold start")
    p.add_argument("--workers", type=_positive_int, default=1,
                   help="parallel processes for --cold sweeps")
    _add_output(p)

    z = sub.add_parser("binary", help="closed-form binary-input rate at given rho values")
    _add_pic_params(z)
    z.add_argument("--rho", type=_positive, nargs="+", required=True)

    e = sub.add_parser("ellipsoid", help="ellipsoid-method baseline on the binomial channel")
    e.add_argument("--n", type=_positive_int, required=True)
    e.add_argument("--tol", type=_positive, default=1e-6)
    return parser


def _format(args) -> Optional[str]:
    if args.out is None:
        return None
    if args.format:
        return args.format
    return "json" if args.out.lower().endswith(".json") else "csv"


def _support_text(dist, digits=4):
    return " ".join(f"{x:.{digits}f}:{p:.{digits}f}" for x, p in dist.as_pairs())


def _run_binomial(args, trace):
    if args.n_min > args.n_max:
        raise _UsageError("--n-min must not exceed --n-max")
    config = DabConfig(epsilon=args.epsilon, symmetric=True)
    result = sweep_binomial(args.n_min, args.n_max, config, trace=trace)
    print(f"{'n':>4} {'C (bits)':>12} {'N':>3} {'gap':>9} {'iter':>5}  support")
    for r in result.records:
        print(f"{int(r.family_index):>4} {r.capacity_per_use:12.8f} {r.support_size:>3} "
              f"{r.gap:9.2e} {r.iterations:>5}  {_support_text(r.support)}")
    return result, EXIT_OK


def _run_pic(args, trace):
    if not args.rho_min < args.rho_max or args.rho_max >= args.eta:
        raise _UsageError("need 0 < --rho-min < --rho-max < --eta")
    params = PicParams(args.alpha, args.beta, args.lam, TransportModel(args.c, args.eta))
    config = DabConfig(epsilon=args.epsilon, direction_strategy=args.strategy,
                       birth_rule=args.birth_rule)
    grid = np.linspace(args.rho_min, args.rho_max, args.rho_steps)
    result = sweep_pic(params, grid, config, warm_start=not args.cold,
                       workers=args.workers, trace=trace)
    print(f"{'rho':>9} {'tau (s)':>10} {'m':>6} {'C (bits)':>11} {'rate':>11} "
          f"{'binary':>11} {'N':>3} {'gap':>9}")
    for r in result.records:
        print(f"{r.family_index:9.5f} {r.tau:10.5f} {r.m_rho:>6} {r.capacity_per_use:11.7f} "
              f"{r.capacity_rate:11.6f} {r.binary_rate:11.6f} {r.support_size:>3} {r.gap:9.2e}")
    for rho, kind, msg in result.failures:
        print(f"rho={rho:.6g}: {kind} failure: {msg}", file=sys.stderr)
    status = EXIT_SOLVER if any(kind == "solver" for _, kind, _ in result.failures) else EXIT_OK
    if result.records:
        best = result.optimum
        rho_star, c_star = find_optimal_rho(result, params, config, refine=args.refine)
        print(f"optimum: rho*={rho_star:.6g} C*={c_star:.6f} bits/s "
              f"(grid point support {_support_text(best.support)})")
        trans = result.binary_transition_rho
        if trans is not None:
            print(f"binary input stops being optimal near rho={trans:.6g}")
    else:
        status = EXIT_SOLVER
    return result, status


def _run_binary(args):
    transport = TransportModel(args.c, args.eta)
    params = PicParams(args.alpha, args.beta, args.lam, transport)
    print(f"{'rho':>9} {'tau (s)':>10} {'m':>6} {'m*theta':>9} {'phi':>10} {'p1*':>8} "
          f"{'C (bits)':>10} {'rate':>11}  binary likely optimal")
    status = EXIT_OK
    for rho in args.rho:
        try:
            state = derive_state(params, rho)
        except ChannelDomainError as err:
            print(f"rho={rho:.6g}: {err}", file=sys.stderr)
            status = EXIT_SOLVER
            continue
        s = summarize(transport, state)
        print(f"{rho:9.5f} {state.tau:10.5f} {state.m_rho:>6} {s.poisson_mean:9.4f} "
              f"{s.phi:10.3e} {s.p1_star:8.5f} {s.capacity_per_use:10.7f} "
              f"{s.capacity_rate:11.6f}  {'yes' if s.binary_likely_optimal else 'no'}")
    return status


def _run_ellipsoid(args):
    channel = binomial_channel(args.n)
    t0 = time.perf_counter()
    dual = solve_dual(channel, tol=args.tol)
    t1 = time.perf_counter()
    dab = dab_solve(channel, DabConfig(epsilon=args.tol, symmetric=True))
    t2 = time.perf_counter()
    print(f"ellipsoid: C={dual.capacity:.9f} bits  iterations={dual.iterations}  "
          f"time={t1 - t0:.2f}s  support {_support_text(dual.dist)}")
    print(f"DAB:       C={dab.capacity:.9f} bits  iterations={dab.iterations}  "
          f"time={t2 - t1:.2f}s  support {_support_text(dab.dist)}")
    return EXIT_OK


class _UsageError(ValueError):
    pass


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)

    try:
        if args.command == "binary":
            return _run_binary(args)
        if args.command == "ellipsoid":
            return _run_ellipsoid(args)
        with contextlib.ExitStack() as stack:
            trace = stack.enter_context(open(args.trace, "w")) if args.trace else None
            runner = _run_binomial if args.command == "binomial" else _run_pic
            result, status = runner(args, trace)
        fmt = _format(args)
        if fmt is not None:
            export(result, fmt, args.out)
        return status
    except _UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"piccap: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (SweepError, DabError, EllipsoidError) as err:
        print(f"piccap: solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
