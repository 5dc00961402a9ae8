"""Command-line entry point: ``asaga {fit,gridsearch,speedup,overlap,verify}``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure or
divergence, 3 property-suite failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .asynchronous import ASYNC_METHODS, NoOverlapData, estimate_overlap, simulate_lockstep
from .data import DatasetError
from .objective import ConvergenceError, Objective, reference_cache_path
from .serial import SolverConfig
from .theory import asaga_stepsize, speedup_condition
from .trace import format_float, read_trace_csv, write_trace_csv

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _float_or_auto(text):
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("worker counts must be positive")
    return vals


def _add_problem(p, methods=bench.ALL_METHODS, default_method=None):
    p.add_argument("--data", required=True,
                   help="libsvm file, saved .npz dataset, or synthetic:n=..,d=..,density=..,seed=..")
    p.add_argument("--method", choices=methods, required=default_method is None, default=default_method)
    p.add_argument("--lambda", dest="lam", type=_float_or_auto, default=None, metavar="FLOAT|auto",
                   help="regularization weight (auto: 1/n)")
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true", help="z-score every feature (makes data dense)")
    p.add_argument("--counter-stride", type=_positive_int, default=100)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="asaga", description="Lock-free asynchronous SAGA and baselines.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="run one solver and write its suboptimality trace")
    _add_problem(fit)
    fit.add_argument("--workers", type=_positive_int, default=1)
    fit.add_argument("--gamma", type=_float_or_auto, default=None, metavar="FLOAT|auto",
                     help="step size (auto: a*(workers-1)/L)")
    fit.add_argument("--out", required=True, help="CSV path; provenance goes to <out>.json")
    fit.add_argument("--target", type=float, default=None, help="stop serial runs at this suboptimality")
    fit.add_argument("--record-every", type=_positive_int, default=None)
    fit.add_argument("--svrg-inner", type=_positive_int, default=None)
    fit.add_argument("--theoretical-reads", action="store_true",
                     help="read the whole iterate before sampling (the analyzed variant)")
    fit.add_argument("--timing", choices=("wall", "none"), default="wall",
                     help="'none' writes zeros in the wall_seconds column for byte-stable output")

    grid = sub.add_parser("gridsearch", help="pick the best of evenly spaced step sizes")
    _add_problem(grid)
    grid.add_argument("--workers", type=_positive_int, default=1)
    grid.add_argument("--lo", type=float, default=None, help="smallest step (default 1/(10L))")
    grid.add_argument("--hi", type=float, default=None, help="largest step (default 10/L)")
    grid.add_argument("--num", type=_positive_int, default=10)
    grid.add_argument("--out", default=None, help="optional CSV of gamma,final_suboptimality,diverged")

    sp = sub.add_parser("speedup", help="wall-clock and iteration speedups over worker counts")
    _add_problem(sp, ASYNC_METHODS, "asaga")
    sp.add_argument("--workers-list", type=_int_list, default=[1, 2, 4])
    sp.add_argument("--repeats", type=_positive_int, default=3)
    sp.add_argument("--target", type=float, default=None, help="default 1e-5 (1e-3 for hogwild)")
    sp.add_argument("--gamma", type=_float_or_auto, default=None, metavar="FLOAT|auto",
                    help="step size shared by all worker counts (auto: a*(max workers - 1)/L)")
    sp.add_argument("--aggregate", choices=("median", "mean"), default="median")
    sp.add_argument("--out", default=None, help="CSV path for the speedup table")
    sp.add_argument("--traces-dir", default=None, help="also write every run's trace here")
    sp.add_argument("--from-traces", default=None, metavar="DIR",
                    help="recompute the table from traces written by --traces-dir instead of running")

    ov = sub.add_parser("overlap", help="measured overlap tau_hat per worker count")
    _add_problem(ov, ("asaga", "hogwild"), "asaga")
    ov.set_defaults(counter_stride=1)
    ov.add_argument("--workers-list", type=_int_list, default=[1, 2, 4])
    ov.add_argument("--repeats", type=_positive_int, default=3)
    ov.add_argument("--gamma", type=_float_or_auto, default=None, metavar="FLOAT|auto")
    ov.add_argument("--spin-ns", type=int, default=0, help="busy-wait added to every iteration")
    ov.add_argument("--harness", choices=("threads", "lockstep"), default="threads",
                    help="'lockstep' interleaves equal-cost virtual workers deterministically")
    ov.add_argument("--out", default=None)

    ver = sub.add_parser("verify", help="run the built-in property suite")
    ver.add_argument("--inject", choices=("non-atomic", "bad-ddiag"), default=None,
                     help="break one ingredient on purpose to see the suite catch it")
    ver.add_argument("-v", "--verbose", action="store_true")
    return parser


def _objective(args) -> Objective:
    ds = bench.load_data(args.data, standardize_features=args.standardize)
    ob = Objective(ds, args.lam)
    if not reference_cache_path(ds, ob.lam).exists():
        print(f"note: computing reference optimum (cached in {reference_cache_path(ds, ob.lam).parent})",
              file=sys.stderr)
    ob.f_star()
    return ob


def _theory_report(ob: Objective, tau: float) -> str:
    c = ob.constants
    delta = ob.profile.delta
    a = asaga_stepsize(tau, delta, c.kappa)
    cond = speedup_condition(tau, ob.n, c.kappa, delta)
    lines = [f"tau_hat = {format_float(tau)}",
             f"a*(tau_hat) = {a:.6g}  (gamma = a*/L = {a / c.L:.6g})",
             f"speedup bounds: n/10 = {cond.size_bound:.6g}, "
             f"max(1, n/kappa)/sqrt(Delta) = {cond.sparsity_bound:.6g}; "
             f"tau_hat below both: {'yes' if cond.holds else 'no'}"]
    if tau >= ob.n / 10:
        lines.append("warning: tau_hat is not below n/10; the convergence guarantee does not cover it")
    return "\n".join(lines)


def cmd_fit(args) -> int:
    ob = _objective(args)
    if args.method not in ASYNC_METHODS and args.workers != 1:
        raise UsageError(f"{args.method} is a serial method; drop --workers or use 1")
    gamma = args.gamma if args.gamma is not None else bench.auto_gamma(ob, args.workers)
    cfg = SolverConfig(gamma=gamma, epochs=args.epochs, seed=args.seed, lam=ob.lam,
                       target_subopt=args.target, record_every=args.record_every,
                       svrg_inner=args.svrg_inner)
    kwargs = {}
    if args.method in ASYNC_METHODS:
        kwargs = {"counter_stride": args.counter_stride}
        if args.method != "kromagnon":
            kwargs["theoretical_reads"] = args.theoretical_reads
    elif args.theoretical_reads:
        raise UsageError("--theoretical-reads applies to asaga and hogwild")
    trace = bench.run_method(args.method, ob, cfg, args.workers, **kwargs)
    trace.meta.update({"data": args.data, "standardize": args.standardize})
    write_trace_csv(trace, args.out, timing=args.timing == "wall")
    print(bench.describe(ob))
    print(f"{args.method} workers={args.workers} gamma={format_float(gamma)} seed={args.seed}: "
          f"final suboptimality {trace.final:.3e} after {int(trace.iterations[-1])} iterations")
    tau = trace.tau_hat if trace.tau_hat is not None else 0.0
    print(_theory_report(ob, tau))
    if trace.status == "diverged":
        print(f"error: {args.method} diverged with gamma={gamma:g}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    ob = _objective(args)
    cfg = SolverConfig(gamma=1.0, epochs=args.epochs, seed=args.seed, lam=ob.lam)
    kwargs = {"counter_stride": args.counter_stride} if args.method in ASYNC_METHODS else {}
    try:
        res = bench.gridsearch(args.method, ob, cfg, args.workers, lo=args.lo, hi=args.hi,
                               num=args.num, **kwargs)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    rows = ["gamma,final_suboptimality,diverged"]
    for g, f, dv in zip(res.grid, res.finals, res.diverged):
        rows.append(f"{format_float(g)},{format_float(f)},{int(dv)}")
        print(f"gamma={g:.6g}  final={f:.3e}{'  diverged' if dv else ''}")
    if args.out:
        Path(args.out).write_text("\n".join(rows) + "\n")
    if res.boundary:
        print(f"warning: best step size {res.best_gamma:.6g} is at the grid boundary", file=sys.stderr)
    print(f"best gamma = {format_float(res.best_gamma)}")
    return EXIT_OK


def _trace_name(method, p, r):
    return f"{method}-w{p}-r{r}.csv"


def cmd_speedup(args) -> int:
    target = args.target if args.target is not None else bench.default_target(args.method)
    if args.from_traces:
        traces = {}
        for path in sorted(Path(args.from_traces).glob(f"{args.method}-w*-r*.csv")):
            tr = read_trace_csv(path)
            traces.setdefault(tr.workers, []).append(tr)
        if 1 not in traces:
            raise UsageError(f"no 1-worker {args.method} traces in {args.from_traces}")
        report = bench.speedup_report(traces, target, aggregate=args.aggregate, method=args.method)
    else:
        ob = _objective(args)
        top = max(args.workers_list)
        gamma = args.gamma if args.gamma is not None else bench.auto_gamma(ob, top)
        cfg = SolverConfig(gamma=gamma, epochs=args.epochs, seed=args.seed, lam=ob.lam)
        report, traces = bench.measure_speedup(args.method, ob, cfg, args.workers_list, args.repeats,
                                               target, args.aggregate, counter_stride=args.counter_stride)
        if args.traces_dir:
            out = Path(args.traces_dir)
            out.mkdir(parents=True, exist_ok=True)
            for p, runs in traces.items():
                for r, tr in enumerate(runs):
                    write_trace_csv(tr, out / _trace_name(args.method, p, r))
    print(report.summary())
    if args.out:
        Path(args.out).write_text(report.csv_text())
    else:
        sys.stdout.write(report.csv_text())
    return EXIT_OK


def cmd_overlap(args) -> int:
    ob = _objective(args)
    gamma = args.gamma if args.gamma is not None else bench.auto_gamma(ob, max(args.workers_list))
    cfg = SolverConfig(gamma=gamma, epochs=args.epochs, seed=args.seed, lam=ob.lam)
    if args.harness == "lockstep":
        rows = []
        for p in args.workers_list:
            _, samples = simulate_lockstep(ob, gamma, p, args.epochs * ob.n, method=args.method, seed=args.seed)
            try:
                tau = estimate_overlap(samples)
            except NoOverlapData as exc:
                raise UsageError(f"{exc}; raise --epochs") from None
            rows.append(bench.OverlapRow(p, tau, p - 1, 1.0, float(p - 1), [tau]))
    else:
        try:
            rows = bench.overlap_report(args.method, ob, cfg, args.workers_list, args.repeats,
                                        counter_stride=args.counter_stride, spin_ns=args.spin_ns)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    text = bench.overlap_csv_text(rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.inject)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} ({r.seconds:.2f}s)")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"fit": cmd_fit, "gridsearch": cmd_gridsearch, "speedup": cmd_speedup,
            "overlap": cmd_overlap, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, DatasetError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"asaga {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"asaga {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"asaga {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
