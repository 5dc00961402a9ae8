"""Single-threaded reference solvers.

Constant-step SGD, dense SAGA, Sparse SAGA, lagged-update SAGA and sparse
SVRG, all for the objective in :mod:`asaga.objective`. The regularizer is
applied through the ``D_i`` projection (``lam * d_diag[v] * x[v]`` on the
support) in every sparse method; dense and lagged SAGA apply ``lam * x``
to every coordinate.

Indices are drawn uniformly with replacement from a splitmix64 stream:
the state starts at ``seed`` and each draw is
``mix64(state += 0x9E3779B97F4A7C15) mod n``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .data import SparseDataset
from .objective import Objective
from .trace import Trace

__all__ = [
    "METHODS",
    "SolverConfig",
    "SerialState",
    "seed_stream",
    "sgd_step",
    "saga_dense_step",
    "saga_sparse_step",
    "saga_lagged_step",
    "flush_lag",
    "svrg_snapshot",
    "svrg_epoch",
    "run_serial",
]

logger = logging.getLogger(__name__)

METHODS = ("sgd", "saga", "sparse-saga", "lagged-saga", "svrg")
_KERNEL_CODE = {"sgd": 0, "sparse-saga": 1, "svrg": 2, "saga": 3, "lagged-saga": 4}


@dataclass
class SolverConfig:
    """Run parameters shared by serial and asynchronous solvers.

    ``epochs`` counts passes of ``n`` sampled steps. ``lam=None`` means
    ``1/n``. ``svrg_inner`` is the inner-loop length ``m`` of SVRG
    (``None`` means ``n``).
    """

    gamma: float
    epochs: int = 10
    seed: int = 0
    lam: float | None = None
    target_subopt: float | None = None
    record_every: int | None = None
    svrg_inner: int | None = None
    divergence_factor: float = 1e8

    def __post_init__(self):
        if not self.gamma >= 0 or not math.isfinite(self.gamma):
            raise ValueError(f"step size must be a non-negative number, got {self.gamma}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.svrg_inner is not None and self.svrg_inner < 1:
            raise ValueError("svrg_inner must be >= 1")


def seed_stream(seed: int, worker: int = 0) -> np.ndarray:
    """splitmix64 state for one sampler stream.

    Worker 0 starts at ``seed`` itself so that a single worker replays the
    serial sequence; worker ``w > 0`` starts at ``mix64(seed + w)``.
    """
    s = np.uint64(seed % 2**64)
    if worker:
        s = K.mix64(np.uint64((seed + worker) % 2**64))
    return np.array([s], dtype=np.uint64)


@dataclass(eq=False)
class SerialState:
    """Iterate, scalar gradient memory and bookkeeping of a serial run."""

    objective: Objective
    x: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    lag_counters: np.ndarray
    rng: np.ndarray
    t: int = 0
    x_ref: np.ndarray | None = None
    sigma_ref: np.ndarray | None = None
    grad_ref: np.ndarray | None = None
    _buf: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initial(cls, objective: Objective, seed: int = 0, x0: np.ndarray | None = None) -> "SerialState":
        d, n = objective.d, objective.n
        x = np.zeros(d) if x0 is None else np.array(x0, dtype=np.float64)
        return cls(
            objective=objective,
            x=x,
            alpha=np.zeros(n),
            alpha_bar=np.zeros(d),
            lag_counters=np.zeros(d, dtype=np.int64),
            rng=seed_stream(seed),
            _buf=np.zeros(d),
        )

    def recomputed_alpha_bar(self) -> np.ndarray:
        ds = self.objective.dataset
        return K.scalar_memory_average(ds.indptr, ds.indices, ds.data, self.alpha, ds.d)

    def _arrays(self):
        ds = self.objective.dataset
        return ds.indptr, ds.indices, ds.data, ds.labels


def sgd_step(state: SerialState, i: int, gamma: float) -> SerialState:
    ob = state.objective
    K.sgd_step(*state._arrays(), ob.profile.d_diag, ob.lam, state.x, int(i), float(gamma))
    state.t += 1
    return state


def saga_dense_step(state: SerialState, i: int, gamma: float) -> SerialState:
    ip, ix, dv, y = state._arrays()
    K.saga_dense_step(ip, ix, dv, y, state.objective.lam, state.x, state.alpha,
                      state.alpha_bar, int(i), float(gamma), state._buf)
    state.t += 1
    return state


def saga_sparse_step(state: SerialState, i: int, gamma: float) -> SerialState:
    ob = state.objective
    K.saga_sparse_step(*state._arrays(), ob.profile.d_diag, ob.lam, state.x, state.alpha,
                       state.alpha_bar, int(i), float(gamma))
    state.t += 1
    return state


def saga_lagged_step(state: SerialState, i: int, gamma: float, t: int | None = None) -> SerialState:
    """Lazy dense-SAGA step; coordinates off the support stay behind until used.

    ``t`` is the 0-based index of this step and defaults to ``state.t``.
    """
    t = state.t if t is None else int(t)
    ip, ix, dv, y = state._arrays()
    K.saga_lagged_step(ip, ix, dv, y, state.objective.lam, state.x, state.alpha,
                       state.alpha_bar, state.lag_counters, t, int(i), float(gamma))
    state.t = t + 1
    return state


def flush_lag(state: SerialState, gamma: float, t: int | None = None) -> SerialState:
    """Bring every coordinate up to step ``t`` (default ``state.t``)."""
    t = state.t if t is None else int(t)
    K.flush_lag(state.x, state.alpha_bar, state.objective.lam, float(gamma), state.lag_counters, t)
    return state


def svrg_snapshot(state: SerialState, x_ref: np.ndarray | None = None) -> SerialState:
    """Fix the SVRG reference point and cache sigma_i(x_ref) and the data gradient there."""
    ds = state.objective.dataset
    x_ref = state.x if x_ref is None else x_ref
    state.x_ref = np.array(x_ref, dtype=np.float64)
    sig = np.empty(ds.n)
    grad = np.zeros(ds.d)
    K.sigma_rows(ds.indptr, ds.indices, ds.data, ds.labels, state.x_ref, 0, ds.n, sig, grad)
    state.sigma_ref = sig
    state.grad_ref = grad / ds.n
    return state


def svrg_step(state: SerialState, i: int, gamma: float) -> SerialState:
    ob = state.objective
    K.svrg_step(*state._arrays(), ob.profile.d_diag, ob.lam, state.x, state.sigma_ref,
                state.grad_ref, int(i), float(gamma))
    state.t += 1
    return state


def svrg_epoch(state: SerialState, gamma: float, m: int, x_ref: np.ndarray | None = None) -> SerialState:
    """Snapshot at ``x_ref`` (default: the current iterate) then ``m`` sampled inner steps."""
    if m < 1:
        raise ValueError("m must be >= 1")
    svrg_snapshot(state, x_ref)
    _advance(state, "svrg", int(m), float(gamma))
    return state


def _advance(state: SerialState, method: str, count: int, gamma: float) -> None:
    ob = state.objective
    ip, ix, dv, y = state._arrays()
    empty = state._buf[:0]
    sig_ref = state.sigma_ref if state.sigma_ref is not None else empty
    grad_ref = state.grad_ref if state.grad_ref is not None else empty
    state.t = K.run_steps(_KERNEL_CODE[method], ip, ix, dv, y, ob.profile.d_diag, ob.lam,
                          state.x, state.alpha, state.alpha_bar, sig_ref, grad_ref,
                          state.lag_counters, state.t, state.rng, count, gamma, state._buf)


def run_serial(
    method: str,
    dataset: SparseDataset | Objective,
    config: SolverConfig,
    *,
    f_star: float | None = None,
    x0: np.ndarray | None = None,
) -> Trace:
    """Run ``config.epochs * n`` sampled steps of ``method`` and record suboptimality.

    A record is taken at iteration 0 and every ``config.record_every``
    iterations (default ``n``). Wall time counts solver work only, not the
    loss evaluations. The run stops early once ``config.target_subopt`` is
    reached, and aborts with ``status="diverged"`` if suboptimality exceeds
    ``divergence_factor`` times its initial value or stops being finite.
    """
    if method not in METHODS:
        raise ValueError(f"unknown serial method {method!r}; expected one of {METHODS}")
    objective = dataset if isinstance(dataset, Objective) else Objective(dataset, config.lam)
    if f_star is None:
        f_star = objective.f_star()
    n = objective.n
    gamma = float(config.gamma)
    record_every = config.record_every or n
    total = config.epochs * n
    m = config.svrg_inner or n
    state = SerialState.initial(objective, seed=config.seed, x0=x0)

    iters = [0]
    secs = [0.0]
    subs = [objective.loss(state.x) - f_star]
    initial = max(subs[0], np.finfo(float).tiny)
    status = "completed"
    elapsed = 0.0
    done = 0
    inner_left = 0
    while done < total:
        chunk = min(record_every - done % record_every, total - done)
        tic = time.perf_counter()
        if method == "svrg":
            left = chunk
            while left:
                if inner_left == 0:
                    svrg_snapshot(state)
                    inner_left = m
                k = min(left, inner_left)
                _advance(state, method, k, gamma)
                inner_left -= k
                left -= k
        else:
            _advance(state, method, chunk, gamma)
            if method == "lagged-saga":
                flush_lag(state, gamma)
        elapsed += time.perf_counter() - tic
        done += chunk
        sub = objective.loss(state.x) - f_star
        iters.append(done)
        secs.append(elapsed)
        if not math.isfinite(sub) or sub > config.divergence_factor * initial:
            logger.warning("%s diverged at iteration %d (gamma=%g)", method, done, gamma)
            subs.append(sub if math.isfinite(sub) else np.inf)
            status = "diverged"
            break
        subs.append(sub)
        if config.target_subopt is not None and sub <= config.target_subopt:
            status = "target"
            break

    return Trace(
        iterations=iters,
        wall_seconds=secs,
        suboptimality=subs,
        method=method,
        workers=1,
        gamma=gamma,
        seed=config.seed,
        lam=objective.lam,
        status=status,
        x=state.x,
        meta={"record_every": record_every, "epochs": config.epochs},
    )
