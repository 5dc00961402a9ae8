"""Lock-free shared-memory solvers: ASAGA, Hogwild and Kromagnon.

Workers are Python threads that each run a GIL-free compiled loop over one
:class:`SharedState`. Reads of ``x``, ``alpha`` and ``alpha_bar`` are
plain loads with no snapshot guarantee; every write is an atomic
compare-and-swap add on a single coordinate. Nothing in the hot path takes
a lock.

Multi-worker runs are not reproducible run to run. A single worker replays
the serial solver with the same seed.

``alpha_bar`` is maintained in shared memory rather than recomputed, so a
read of ``alpha_i`` and of ``alpha_bar`` may disagree transiently and the
update is not guaranteed unbiased; no coordinate locks are added to fix
this. Lagged updates have no asynchronous form here: concurrent catch-ups
would over-correct, the (x_v, c_v, abar_v) triplet would need atomic reads,
and they need an explicit global clock.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .data import SparseDataset
from .objective import Objective
from .serial import SolverConfig, seed_stream
from .trace import Trace

__all__ = [
    "ASYNC_METHODS",
    "SharedState",
    "OverlapSamples",
    "NoOverlapData",
    "WorkerError",
    "atomic_coordinate_add",
    "stress_atomic_adds",
    "asaga_iteration",
    "hogwild_iteration",
    "kromagnon_run",
    "run_async",
    "estimate_overlap",
    "iteration_time_ratio",
    "simulate_lockstep",
]

logger = logging.getLogger(__name__)

ASYNC_METHODS = ("asaga", "hogwild", "kromagnon")
SERIAL_COUNTERPART = {"asaga": "sparse-saga", "hogwild": "sgd", "kromagnon": "svrg"}
_WRITE_MODES = {"cas": K.WRITE_CAS, "plain": K.WRITE_PLAIN}
DEFAULT_STRIDE = 100
OVERLAP_WINDOW = 100


class NoOverlapData(ValueError):
    """Not enough instrumented iterations to form one averaging window."""


class WorkerError(RuntimeError):
    """A worker thread raised; the run is aborted."""


@dataclass(eq=False)
class SharedState:
    """Concurrently mutated solver state.

    ``iter_counter`` is bumped once every ``counter_stride`` local
    iterations of each worker, so ``iter_counter * counter_stride``
    approximates the global iteration count.
    """

    x: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    iter_counter: np.ndarray
    counter_stride: int = DEFAULT_STRIDE

    @classmethod
    def zeros(cls, n: int, d: int, counter_stride: int = DEFAULT_STRIDE, x0=None) -> "SharedState":
        x = np.zeros(d) if x0 is None else np.array(x0, dtype=np.float64)
        return cls(x, np.zeros(n), np.zeros(d), np.zeros(1, dtype=np.int64), int(counter_stride))

    @property
    def iterations(self) -> int:
        return int(self.iter_counter[0]) * self.counter_stride


@dataclass
class OverlapSamples:
    """Per-worker counter labels read at the start and end of each iteration.

    ``starts[w][k]`` / ``ends[w][k]`` are the shared counter values seen by
    worker ``w`` before its k-th iteration's reads and after its last
    write; ``durations_ns`` is the wall time of that iteration.
    """

    starts: list
    ends: list
    durations_ns: list
    stride: int

    def window_averages(self, window: int = OVERLAP_WINDOW) -> np.ndarray:
        out = []
        for s, e in zip(self.starts, self.ends):
            k = (len(s) // window) * window
            if k:
                out.append((e[:k] - s[:k]).reshape(-1, window).mean(axis=1))
        return np.concatenate(out) if out else np.zeros(0)


def _write_mode(mode) -> int:
    if isinstance(mode, bool):
        return K.WRITE_CAS if mode else K.WRITE_PLAIN
    try:
        return _WRITE_MODES[mode]
    except KeyError:
        raise ValueError(f"write mode must be one of {tuple(_WRITE_MODES)}") from None


def atomic_coordinate_add(vec: np.ndarray, v: int, delta: float, *, atomic=True) -> None:
    """``vec[v] += delta`` without losing concurrent updates.

    With ``atomic=False`` this is a plain load/add/store, kept only to
    demonstrate lost updates.
    """
    if not 0 <= v < vec.shape[0]:
        raise IndexError(v)
    K.coordinate_add(vec, int(v), float(delta), _write_mode(atomic))


def stress_atomic_adds(vec: np.ndarray, v: int, workers: int, k: int, *, atomic=True) -> float:
    """``workers`` threads each add 1.0 to ``vec[v]`` ``k`` times; returns the final value."""
    mode = _write_mode(atomic)
    K.add_repeatedly(np.zeros(1), 0, 1, mode)  # compile before the threads start
    threads = [threading.Thread(target=K.add_repeatedly, args=(vec, int(v), int(k), mode))
               for _ in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return float(vec[v])


def estimate_overlap(samples: OverlapSamples, window: int = OVERLAP_WINDOW) -> float:
    """Largest ``window``-iteration average overlap, in iterations.

    The average of (end label - start label) over a window is a lower
    bound on the true maximum overlap; the maximum over all windows is
    reported, rescaled by the counter stride.
    """
    avgs = samples.window_averages(window)
    if avgs.size == 0:
        raise NoOverlapData(f"need at least {window} instrumented iterations in one worker")
    return float(avgs.max()) * samples.stride


def iteration_time_ratio(samples: OverlapSamples) -> float:
    """Slowest over fastest single-iteration wall time."""
    parts = [np.asarray(x) for x in samples.durations_ns if len(x)]
    d = np.concatenate(parts) if parts else np.zeros(0)
    if d.size == 0:
        raise NoOverlapData("no instrumented iterations")
    return float(d.max()) / max(float(d.min()), 1.0)


# -- worker plumbing ----------------------------------------------------------


@dataclass(eq=False)
class _Worker:
    rng: np.ndarray
    xfull: np.ndarray
    xs: np.ndarray
    bs: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    durations: np.ndarray
    done: int = 0


@dataclass(eq=False)
class _Snapshots:
    every: int
    x: np.ndarray
    iters: np.ndarray
    times: np.ndarray


def _max_row(dataset: SparseDataset) -> int:
    return int(np.diff(dataset.indptr).max())


def _make_worker(dataset, seed, w, budget, instrument, full_read):
    size = budget if instrument else 0
    return _Worker(
        rng=seed_stream(seed, w),
        xfull=np.zeros(dataset.d if full_read else 0),
        xs=np.zeros(_max_row(dataset)),
        bs=np.zeros(_max_row(dataset)),
        starts=np.zeros(size, dtype=np.int64),
        ends=np.zeros(size, dtype=np.int64),
        durations=np.zeros(size, dtype=np.int64),
    )


def _no_snapshots(d):
    return _Snapshots(0, np.zeros((0, d)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def _call_kernel(method_code, objective, shared, worker, gamma, n_iters, write_mode, full_read,
                 snaps, instrument, spin_ns, sig_ref, grad_ref, phase, violations):
    ds = objective.dataset
    off = worker.done
    K.async_worker(
        method_code, ds.indptr, ds.indices, ds.data, ds.labels, objective.profile.d_diag,
        objective.lam, float(gamma),
        shared.x, shared.alpha, shared.alpha_bar, sig_ref, grad_ref,
        shared.iter_counter, shared.counter_stride, int(n_iters), worker.rng, write_mode, full_read,
        worker.xfull, worker.xs, worker.bs,
        snaps.every, snaps.x, snaps.iters, snaps.times,
        instrument,
        worker.starts[off:] if instrument else worker.starts,
        worker.ends[off:] if instrument else worker.ends,
        worker.durations[off:] if instrument else worker.durations,
        int(spin_ns), phase, violations, off,
    )
    worker.done += int(n_iters)


def _single_iteration(method_code, shared, objective, gamma, rng, write_mode, sig_ref, grad_ref):
    ds = objective.dataset
    worker = _Worker(rng, np.zeros(0), np.zeros(_max_row(ds)), np.zeros(_max_row(ds)),
                     np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64))
    phase = np.ones(1, dtype=np.int64)
    _call_kernel(method_code, objective, shared, worker, gamma, 1, _write_mode(write_mode), False,
                 _no_snapshots(ds.d), False, 0, sig_ref, grad_ref, phase, np.zeros(1, np.int64))


def asaga_iteration(shared: SharedState, objective: Objective, gamma: float, rng: np.ndarray,
                    *, atomic=True) -> None:
    """One ASAGA iteration on ``shared``; ``rng`` is a splitmix64 state array.

    The sample is drawn first and only the support is read. The update
    ``-gamma (dalpha a_v + d_v abar_v + lam d_v x_v)`` goes to ``x``,
    ``dalpha`` to ``alpha_i`` and ``dalpha a_v / n`` to ``alpha_bar``, each
    as an atomic add.
    """
    empty = np.zeros(0)
    _single_iteration(K.SAGA, shared, objective, gamma, rng, atomic, empty, empty)


def hogwild_iteration(shared: SharedState, objective: Objective, gamma: float, rng: np.ndarray,
                      *, atomic=True) -> None:
    """One Hogwild (SGD) iteration with the projected regularizer; no gradient memory."""
    empty = np.zeros(0)
    _single_iteration(K.SGD, shared, objective, gamma, rng, atomic, empty, empty)


def _run_threads(targets):
    errors = []

    def guard(fn):
        def run():
            try:
                fn()
            except BaseException as exc:  # re-raised in the caller
                errors.append(exc)
        return run

    threads = [threading.Thread(target=guard(fn), daemon=True) for fn in targets]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise WorkerError(f"{len(errors)} worker(s) failed: {errors[0]!r}") from errors[0]


def _split(total: int, workers: int) -> list[int]:
    base, extra = divmod(total, workers)
    return [base + (w < extra) for w in range(workers)]


def _prepare(objective, config, workers, counter_stride, x0):
    n, d = objective.n, objective.d
    total = config.epochs * n
    record_every = config.record_every or n
    # snapshot marks must land on counter increments
    every = max(1, -(-record_every // counter_stride))
    shared = SharedState.zeros(n, d, counter_stride, x0=x0)
    slots = total // (every * counter_stride) + 2
    snaps = _Snapshots(every, np.zeros((slots, d)), np.zeros(slots, dtype=np.int64),
                       np.zeros(slots, dtype=np.int64))
    snaps.x[0] = shared.x
    return shared, snaps, total


def _build_trace(method, objective, config, workers, shared, snaps, total, start_ns, end_ns,
                 f_star, samples, meta):
    filled = np.flatnonzero(snaps.iters > 0)
    filled = filled[snaps.iters[filled] < total]
    xs = [snaps.x[0]] + [snaps.x[k] for k in filled] + [shared.x.copy()]
    iters = [0] + [int(snaps.iters[k]) for k in filled] + [total]
    secs = [0.0] + [(snaps.times[k] - start_ns) * 1e-9 for k in filled] + [(end_ns - start_ns) * 1e-9]
    order = np.argsort(iters, kind="stable")
    subs = []
    status = "completed"
    initial = None
    keep = []
    for k in order:
        if keep and iters[k] == iters[keep[-1]]:
            continue
        sub = objective.loss(xs[k]) - f_star
        if initial is None:
            initial = max(sub, np.finfo(float).tiny)
        keep.append(k)
        if not math.isfinite(sub) or sub > config.divergence_factor * initial:
            subs.append(sub if math.isfinite(sub) else np.inf)
            status = "diverged"
            logger.warning("%s diverged (gamma=%g, workers=%d)", method, config.gamma, workers)
            break
        subs.append(sub)
    # inconsistent snapshots can dip below the reference by a rounding error
    subs = [max(s, -1e-12) if s > -1e-12 else s for s in subs]
    tau_hat = None
    if samples is not None:
        try:
            tau_hat = estimate_overlap(samples)
        except NoOverlapData:
            pass
    if config.target_subopt is not None and any(s <= config.target_subopt for s in subs):
        status = "target" if status == "completed" else status
    return Trace(
        iterations=[iters[k] for k in keep],
        wall_seconds=[secs[k] for k in keep],
        suboptimality=subs,
        method=method,
        workers=workers,
        gamma=float(config.gamma),
        seed=config.seed,
        lam=objective.lam,
        tau_hat=tau_hat,
        status=status,
        x=shared.x.copy(),
        meta=meta,
    )


def run_async(
    method: str,
    dataset: SparseDataset | Objective,
    config: SolverConfig,
    workers: int,
    *,
    counter_stride: int = DEFAULT_STRIDE,
    write_mode: str = "cas",
    theoretical_reads: bool = False,
    instrument: bool = True,
    spin_ns: int = 0,
    f_star: float | None = None,
    x0: np.ndarray | None = None,
    return_samples: bool = False,
):
    """Run ``config.epochs * n`` iterations split evenly over ``workers`` threads.

    Snapshots of the shared iterate are copied whenever the iteration
    counter crosses a multiple of ``record_every``; suboptimality is
    evaluated on them afterwards. ``theoretical_reads`` makes each
    iteration copy the whole of ``x`` before sampling (the analyzed
    variant). ``spin_ns`` pads every iteration with a busy wait, which
    gives the equal-cost workload used to calibrate overlap measurements.
    ``write_mode="plain"`` replaces the atomic adds with unsynchronized
    read-modify-write and exists only to show why atomics are needed.

    Returns the :class:`Trace`, or ``(trace, samples)`` when
    ``return_samples`` is set.
    """
    if method not in ASYNC_METHODS:
        raise ValueError(f"unknown asynchronous method {method!r}; expected one of {ASYNC_METHODS}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    objective = dataset if isinstance(dataset, Objective) else Objective(dataset, config.lam)
    if f_star is None:
        f_star = objective.f_star()
    if method == "kromagnon":
        return kromagnon_run(objective, config, workers, counter_stride=counter_stride,
                             write_mode=write_mode, instrument=instrument, spin_ns=spin_ns,
                             f_star=f_star, x0=x0, return_samples=return_samples)
    mode = _write_mode(write_mode)
    shared, snaps, total = _prepare(objective, config, workers, counter_stride, x0)
    budgets = _split(total, workers)
    pool = [_make_worker(objective.dataset, config.seed, w, budgets[w], instrument, theoretical_reads)
            for w in range(workers)]
    code = K.SAGA if method == "asaga" else K.SGD
    empty = np.zeros(0)
    phase = np.ones(1, dtype=np.int64)
    violations = np.zeros(1, dtype=np.int64)

    def target(w):
        return lambda: _call_kernel(code, objective, shared, pool[w], config.gamma, budgets[w], mode,
                                    theoretical_reads, snaps, instrument, spin_ns, empty, empty,
                                    phase, violations)

    start = K.now_ns()
    _run_threads([target(w) for w in range(workers)])
    end = K.now_ns()
    samples = _samples(pool, counter_stride) if instrument else None
    meta = {"counter_stride": counter_stride, "write_mode": write_mode,
            "theoretical_reads": theoretical_reads, "epochs": config.epochs,
            "record_every": snaps.every * counter_stride}
    trace = _build_trace(method, objective, config, workers, shared, snaps, total, start, end,
                         f_star, samples, meta)
    return (trace, samples) if return_samples else trace


def _samples(pool, stride):
    return OverlapSamples(
        starts=[w.starts[: w.done] for w in pool],
        ends=[w.ends[: w.done] for w in pool],
        durations_ns=[w.durations[: w.done] for w in pool],
        stride=stride,
    )


def kromagnon_run(
    objective: Objective,
    config: SolverConfig,
    workers: int,
    *,
    counter_stride: int = DEFAULT_STRIDE,
    write_mode: str = "cas",
    instrument: bool = True,
    spin_ns: int = 0,
    f_star: float | None = None,
    x0: np.ndarray | None = None,
    return_samples: bool = False,
):
    """Asynchronous sparse SVRG.

    Each outer loop has a synchronized phase, in which the workers split
    the rows to compute sigma_i at the reference point and the data
    gradient there, followed by a barrier and an asynchronous phase of
    ``config.svrg_inner`` (default n) inner iterations shared among the
    workers. Inner iterations check a phase flag and count any that run
    outside the asynchronous phase; a nonzero count raises.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if f_star is None:
        f_star = objective.f_star()
    ds = objective.dataset
    n, d = ds.n, ds.d
    mode = _write_mode(write_mode)
    m = config.svrg_inner or n
    shared, snaps, total = _prepare(objective, config, workers, counter_stride, x0)
    outer = []
    left = total
    while left:
        outer.append(min(m, left))
        left -= outer[-1]
    budgets = [sum(_split(k, workers)[w] for k in outer) for w in range(workers)]
    pool = [_make_worker(ds, config.seed, w, budgets[w], instrument, False) for w in range(workers)]
    sig_ref = np.zeros(n)
    grad_ref = np.zeros(d)
    partial = np.zeros((workers, d))
    rows = np.linspace(0, n, workers + 1).astype(np.int64)
    phase = np.zeros(1, dtype=np.int64)
    violations = np.zeros(1, dtype=np.int64)
    barrier = threading.Barrier(workers)

    def worker_loop(w):
        for k in outer:
            partial[w] = 0.0
            K.sigma_rows(ds.indptr, ds.indices, ds.data, ds.labels, shared.x, rows[w], rows[w + 1],
                         sig_ref, partial[w])
            if barrier.wait() == 0:
                grad_ref[:] = partial.sum(axis=0) / n
                phase[0] = 1
            barrier.wait()
            _call_kernel(K.SVRG, objective, shared, pool[w], config.gamma, _split(k, workers)[w], mode,
                         False, snaps, instrument, spin_ns, sig_ref, grad_ref, phase, violations)
            if barrier.wait() == 0:
                phase[0] = 0
            barrier.wait()

    def target(w):
        def run():
            try:
                worker_loop(w)
            except threading.BrokenBarrierError:
                raise
            except BaseException:
                barrier.abort()
                raise
        return run

    start = K.now_ns()
    _run_threads([target(w) for w in range(workers)])
    end = K.now_ns()
    if violations[0]:
        raise WorkerError(f"{int(violations[0])} inner iterations ran outside the asynchronous phase")
    samples = _samples(pool, counter_stride) if instrument else None
    meta = {"counter_stride": counter_stride, "write_mode": write_mode, "svrg_inner": m,
            "epochs": config.epochs, "record_every": snaps.every * counter_stride}
    trace = _build_trace("kromagnon", objective, config, workers, shared, snaps, total, start, end,
                         f_star, samples, meta)
    return (trace, samples) if return_samples else trace


def simulate_lockstep(objective: Objective, gamma: float, workers: int, iterations: int,
                      *, method: str = "asaga", seed: int = 0):
    """Deterministic equal-speed interleaving of ``workers`` virtual workers.

    Worker ``t mod p`` acts at tick ``t``: it writes the update it computed
    ``p`` ticks earlier, bumps the counter, then samples, reads and computes
    its next update. Every iteration therefore overlaps exactly ``p - 1``
    others and reads values that miss the last ``p - 1`` updates. Returns
    ``(x, samples)`` with stride-1 overlap labels.
    """
    if method not in ("asaga", "hogwild"):
        raise ValueError("lockstep simulation supports asaga and hogwild")
    ds = objective.dataset
    n = ds.n
    ddiag = objective.profile.d_diag
    lam = objective.lam
    x = np.zeros(ds.d)
    alpha = np.zeros(n)
    abar = np.zeros(ds.d)
    counter = 0
    rngs = [seed_stream(seed, w) for w in range(workers)]
    pending = [None] * workers
    starts = [[] for _ in range(workers)]
    ends = [[] for _ in range(workers)]
    begun = 0
    tick = 0
    while begun < iterations or any(p is not None for p in pending):
        w = tick % workers
        tick += 1
        job = pending[w]
        if job is not None:
            i, cols, dx, dab, dalpha, start = job
            x[cols] += dx
            if method == "asaga":
                abar[cols] += dab
                alpha[i] += dalpha
            starts[w].append(start)
            ends[w].append(counter)
            counter += 1
            pending[w] = None
        if begun < iterations:
            i = int(K.next_index(rngs[w], n))
            cols, vals = ds.row(i)
            xh = x[cols].copy()
            s = float(K.sigma(float(np.dot(xh, vals)), ds.labels[i]))
            if method == "asaga":
                dalpha = s - alpha[i]
                step = dalpha * vals + ddiag[cols] * abar[cols] + lam * ddiag[cols] * xh
                dab = dalpha * vals / n
            else:
                dalpha = 0.0
                step = s * vals + lam * ddiag[cols] * xh
                dab = None
            pending[w] = (i, cols, -gamma * step, dab, dalpha, counter)
            begun += 1
    samples = OverlapSamples(
        starts=[np.array(s, dtype=np.int64) for s in starts],
        ends=[np.array(e, dtype=np.int64) for e in ends],
        durations_ns=[np.ones(len(s), dtype=np.int64) for s in starts],
        stride=1,
    )
    return x, samples
