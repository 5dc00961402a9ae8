"""Experiment orchestration and reports: grid search, speedup and overlap tables."""
from __future__ import annotations

import csv
import io
import logging
import math
import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from .asynchronous import (
    ASYNC_METHODS,
    NoOverlapData,
    estimate_overlap,
    iteration_time_ratio,
    run_async,
)
from .data import SparseDataset, load_libsvm, make_synthetic, standardize
from .objective import Objective
from .serial import METHODS as SERIAL_METHODS
from .serial import SolverConfig, run_serial
from .theory import asaga_stepsize
from .trace import Trace, format_float

__all__ = [
    "ALL_METHODS",
    "DEFAULT_TARGET",
    "HOGWILD_TARGET",
    "GridResult",
    "SpeedupRow",
    "SpeedupReport",
    "OverlapRow",
    "load_data",
    "auto_gamma",
    "run_method",
    "fitted_contraction",
    "gridsearch",
    "speedup_report",
    "measure_speedup",
    "overlap_report",
    "default_target",
]

logger = logging.getLogger(__name__)

ALL_METHODS = SERIAL_METHODS + ASYNC_METHODS
DEFAULT_TARGET = 1e-5
HOGWILD_TARGET = 1e-3

_SYNTH_KEYS = {"n": int, "d": int, "density": float, "dense": lambda s: s.lower() in ("1", "true", "yes"),
               "label_noise": float, "row_norm": float, "seed": int}


def load_data(source: str, *, standardize_features: bool = False) -> SparseDataset:
    """Load ``source``: a libsvm file, a saved ``.npz`` dataset, or ``synthetic:k=v,...``.

    Synthetic keys are ``n``, ``d``, ``density``, ``dense``, ``label_noise``,
    ``row_norm`` and ``seed``, e.g. ``synthetic:n=2000,d=500,density=0.01``.
    """
    if source.startswith("synthetic"):
        kwargs = {}
        body = source.partition(":")[2]
        for item in filter(None, body.split(",")):
            key, sep, value = item.partition("=")
            if not sep or key not in _SYNTH_KEYS:
                raise ValueError(f"bad synthetic option {item!r}; keys are {sorted(_SYNTH_KEYS)}")
            kwargs[key] = _SYNTH_KEYS[key](value)
        kwargs.setdefault("n", 1000)
        kwargs.setdefault("d", 200)
        ds = make_synthetic(**kwargs)
    else:
        ds = load_libsvm(source)
    return standardize(ds) if standardize_features else ds


def auto_gamma(objective: Objective, workers: int) -> float:
    """``a*(tau)/L`` with the overlap prior ``tau = workers - 1``."""
    tau = max(workers - 1, 0)
    delta = objective.profile.delta
    c = objective.constants
    if tau >= objective.n / 10:
        logger.warning("overlap prior %d is not below n/10 = %g; the step-size guarantee does not apply",
                       tau, objective.n / 10)
    return asaga_stepsize(tau, delta, c.kappa, objective.n) / c.L


def default_target(method: str) -> float:
    return HOGWILD_TARGET if method in ("hogwild", "sgd") else DEFAULT_TARGET


def run_method(method: str, objective: Objective, config: SolverConfig, workers: int = 1,
               f_star: float | None = None, **async_kwargs) -> Trace:
    """Dispatch to the serial or asynchronous solver."""
    if method in SERIAL_METHODS:
        if workers != 1:
            raise ValueError(f"{method} is serial; use workers=1")
        return run_serial(method, objective, config, f_star=f_star)
    if method in ASYNC_METHODS:
        return run_async(method, objective, config, workers, f_star=f_star, **async_kwargs)
    raise ValueError(f"unknown method {method!r}; expected one of {ALL_METHODS}")


def fitted_contraction(trace: Trace, floor: float = 1e-13, burn_in: int = 1) -> float:
    """Per-iteration log-contraction from a least-squares fit of log suboptimality.

    Uses records above ``floor`` after the first ``burn_in`` records; the
    result is minus the fitted slope of ``log(subopt)`` against iteration.
    """
    it = trace.iterations[burn_in:].astype(float)
    sub = trace.suboptimality[burn_in:]
    keep = sub > floor
    if keep.sum() < 2:
        raise ValueError("need at least two records above the floor to fit a rate")
    slope = np.polyfit(it[keep], np.log(sub[keep]), 1)[0]
    return float(-slope)


# -- grid search --------------------------------------------------------------


@dataclass
class GridResult:
    best_gamma: float
    grid: list
    finals: list
    diverged: list
    boundary: bool
    traces: list = field(default_factory=list, repr=False)


def gridsearch(method: str, objective: Objective, config: SolverConfig, workers: int = 1, *,
               lo: float | None = None, hi: float | None = None, num: int = 10,
               grid=None, **async_kwargs) -> GridResult:
    """Pick the step size with the lowest final suboptimality among ``num`` evenly spaced values.

    The default range is ``[1/(10L), 10/L]``. Diverging candidates are
    excluded; a winner at either end of the grid logs a warning.

    Raises
    ------
    RuntimeError
        If every candidate diverges.
    """
    L = objective.constants.L
    if grid is None:
        lo = 1.0 / (10 * L) if lo is None else lo
        hi = 10.0 / L if hi is None else hi
        grid = list(np.linspace(lo, hi, num)) if num > 1 else [lo]
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("empty step-size grid")
    f_star = objective.f_star()
    finals, diverged, traces = [], [], []
    for g in grid:
        tr = run_method(method, objective, replace(config, gamma=g, target_subopt=None), workers,
                        f_star=f_star, **async_kwargs)
        bad = tr.status == "diverged" or not math.isfinite(tr.final)
        finals.append(tr.final)
        diverged.append(bad)
        traces.append(tr)
    ok = [k for k in range(len(grid)) if not diverged[k]]
    if not ok:
        raise RuntimeError(f"all {len(grid)} step sizes diverged for {method}")
    best = min(ok, key=lambda k: (finals[k], -grid[k]))
    boundary = best in (0, len(grid) - 1)
    if boundary:
        logger.warning("best step size %g is at the grid boundary; widen the grid", grid[best])
    return GridResult(grid[best], grid, finals, diverged, boundary, traces)


# -- speedup -------------------------------------------------------------------


@dataclass
class SpeedupRow:
    workers: int
    seconds: float | None
    speedup: float | None
    iterations: float | None
    theoretical_speedup: float | None
    reached: int
    repeats: int


@dataclass
class SpeedupReport:
    method: str
    target: float
    aggregate: str
    rows: list

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["workers", f"{self.aggregate}_seconds", "speedup", f"{self.aggregate}_iterations",
                    "theoretical_speedup"])
        for r in self.rows:
            w.writerow([r.workers] + [_cell(v) for v in (r.seconds, r.speedup, r.iterations,
                                                            r.theoretical_speedup)])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{self.method}: time and iterations to suboptimality {self.target:g} "
                 f"({self.aggregate} over repeats)"]
        lines.append(f"{'workers':>8} {'speedup':>10} {'theoretical':>12}")
        for r in self.rows:
            lines.append(f"{r.workers:>8} {_short(r.speedup):>10} {_short(r.theoretical_speedup):>12}")
        return "\n".join(lines)


def _cell(v):
    return "unreached" if v is None else format_float(v)


def _short(v):
    return "unreached" if v is None else f"{v:.3f}"


def speedup_report(traces: dict, target: float, *, aggregate: str = "median",
                   method: str = "") -> SpeedupReport:
    """Speedup tables from ``{workers: [Trace, ...]}``.

    Wall-clock speedup is ``time(1)/time(p)``; the iteration ("theoretical")
    speedup is ``p * iters(1)/iters(p)``, i.e. how many times faster ``p``
    workers would be if each iteration cost the same as a serial one. A
    worker count is marked unreached unless every repeat hit the target.
    """
    agg = {"median": statistics.median, "mean": statistics.fmean}[aggregate]
    if 1 not in traces:
        raise ValueError("speedup needs a 1-worker baseline")
    stats = {}
    for p, runs in sorted(traces.items()):
        hits = [tr.first_reaching(target) for tr in runs]
        done = [h for h in hits if h is not None]
        if len(done) == len(runs) and runs:
            stats[p] = (agg([h[1] for h in done]), agg([h[0] for h in done]), len(done), len(runs))
        else:
            stats[p] = (None, None, len(done), len(runs))
    base_t, base_i = stats[1][0], stats[1][1]
    rows = []
    for p, (secs, iters, reached, reps) in stats.items():
        sp = th = None
        if secs is not None and base_t is not None:
            sp = 1.0 if p == 1 else base_t / secs
            th = 1.0 if p == 1 else p * base_i / iters
        rows.append(SpeedupRow(p, secs, sp, iters, th, reached, reps))
    return SpeedupReport(method or next(iter(traces.values()))[0].method, target, aggregate, rows)


def measure_speedup(method: str, objective: Objective, config: SolverConfig, workers_list,
                    repeats: int = 3, target: float | None = None, aggregate: str = "median",
                    **async_kwargs):
    """Run ``repeats`` seeds per worker count and build a :class:`SpeedupReport`.

    Repeat ``r`` uses seed ``config.seed + r`` for every worker count.
    """
    if method not in ASYNC_METHODS:
        raise ValueError("speedup is measured for asynchronous methods")
    target = default_target(method) if target is None else target
    f_star = objective.f_star()
    traces = {}
    for p in sorted(set(int(w) for w in workers_list) | {1}):
        traces[p] = [run_async(method, objective, replace(config, seed=config.seed + r), p,
                               f_star=f_star, **async_kwargs) for r in range(repeats)]
    return speedup_report(traces, target, aggregate=aggregate, method=method), traces


# -- overlap --------------------------------------------------------------------


@dataclass
class OverlapRow:
    workers: int
    tau_hat: float
    lower: int
    ratio: float
    upper: float
    runs: list


def overlap_report(method: str, objective: Objective, config: SolverConfig, workers_list,
                   repeats: int = 3, *, counter_stride: int = 1, spin_ns: int = 0) -> list:
    """Median ``tau_hat`` per worker count, with ``p - 1`` and the ``(p - 1) R`` heuristic.

    ``R`` is the median over repeats of the slowest-to-fastest iteration
    time ratio.
    """
    f_star = objective.f_star()
    rows = []
    for p in workers_list:
        taus, ratios = [], []
        for r in range(repeats):
            _, samples = run_async(method, objective, replace(config, seed=config.seed + r), p,
                                   counter_stride=counter_stride, spin_ns=spin_ns, f_star=f_star,
                                   return_samples=True)
            try:
                taus.append(estimate_overlap(samples))
                ratios.append(iteration_time_ratio(samples))
            except NoOverlapData:
                raise ValueError("run too short for one overlap window; raise --epochs") from None
        R = statistics.median(ratios)
        rows.append(OverlapRow(p, statistics.median(taus), p - 1, R, (p - 1) * R, taus))
    return rows


def overlap_csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["workers", "tau_hat", "p_minus_1", "iteration_time_ratio", "upper_heuristic"])
    for r in rows:
        w.writerow([r.workers, format_float(r.tau_hat), r.lower, format_float(r.ratio), format_float(r.upper)])
    return buf.getvalue()


def describe(objective: Objective) -> str:
    c = objective.constants
    prof = objective.profile
    return (f"n={objective.n} d={objective.d} lambda={objective.lam:g} L={c.L:.6g} "
            f"kappa={c.kappa:.6g} Delta={prof.delta:.6g}")

