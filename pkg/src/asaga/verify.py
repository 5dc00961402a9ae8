"""Built-in property suite run by ``asaga verify``.

Each check builds its own small synthetic instances and returns a
:class:`CheckResult`. ``inject`` deliberately breaks one ingredient to
show that the matching check catches it: ``"non-atomic"`` swaps the
atomic adds for plain read-modify-write, ``"bad-ddiag"`` doubles the
sparse reweighting.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .asynchronous import SharedState, run_async, stress_atomic_adds
from .bench import fitted_contraction
from .data import make_synthetic, problem_constants
from .objective import Objective
from .serial import SerialState, SolverConfig, run_serial, saga_dense_step, saga_sparse_step
from .theory import asaga_stepsize, serial_rate

__all__ = ["CheckResult", "INJECTIONS", "run_checks", "sparse_increment_average"]

INJECTIONS = ("non-atomic", "bad-ddiag")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _fd_gradient(objective, x, h=1e-6):
    g = np.empty_like(x)
    for v in range(x.size):
        step = h * (1 + abs(x[v]))
        e = np.zeros_like(x)
        e[v] = step
        g[v] = (objective.loss(x + e) - objective.loss(x - e)) / (2 * step)
    return g


def check_gradient(instances=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(instances):
        n, d = int(rng.integers(2, 51)), int(rng.integers(1, 21))
        ds = make_synthetic(n, d, density=float(rng.uniform(0.1, 1.0)), seed=int(rng.integers(2**31)))
        ob = Objective(ds, float(rng.uniform(1e-3, 1.0)))
        x = rng.normal(size=d)
        g, fd = ob.full_gradient(x), _fd_gradient(ob, x)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    return worst <= 1e-6, f"max relative error {worst:.2e} over {instances} instances"


def _random_state(rng, n_max=20, d_max=10):
    n, d = int(rng.integers(2, n_max + 1)), int(rng.integers(1, d_max + 1))
    ds = make_synthetic(n, d, density=float(rng.uniform(0.1, 0.6)), seed=int(rng.integers(2**31)))
    ob = Objective(ds, float(rng.uniform(1e-3, 0.5)))
    st = SerialState.initial(ob)
    # features no sample uses are never updated, so reachable states keep them at 0
    st.x[:] = rng.normal(size=ds.d) * (ob.profile.p > 0)
    st.alpha[:] = rng.uniform(-1, 1, size=n)
    st.alpha_bar[:] = st.recomputed_alpha_bar()
    return ob, st


def sparse_increment_average(state, gamma, step=saga_sparse_step):
    """Average over every i of the x-increment of one step taken from ``state``."""
    total = np.zeros_like(state.x)
    n = state.objective.n
    for i in range(n):
        s = SerialState(state.objective, state.x.copy(), state.alpha.copy(), state.alpha_bar.copy(),
                        state.lag_counters.copy(), state.rng.copy(), _buf=np.zeros_like(state.x))
        step(s, i, gamma)
        total += s.x - state.x
    return total / n


def check_unbiasedness(instances=20, seed=1, scale=1.0):
    rng = np.random.default_rng(seed)
    worst_d = worst_inc = 0.0
    for _ in range(instances):
        ob, st = _random_state(rng)
        ds = ob.dataset
        ddiag = ob.profile.d_diag * scale
        avg = np.zeros(ds.d)
        for i in range(ds.n):
            cols, _ = ds.row(i)
            avg[cols] += ddiag[cols] * st.alpha_bar[cols]
        avg /= ds.n
        worst_d = max(worst_d, np.max(np.abs(avg - st.alpha_bar)))
        if scale != 1.0:
            ob.profile = replace(ob.profile, d_diag=ddiag)
        sparse = sparse_increment_average(st, 0.1)
        dense = sparse_increment_average(st, 0.1, saga_dense_step)
        worst_inc = max(worst_inc, np.max(np.abs(sparse - dense)))
    ok = worst_d <= 1e-12 and worst_inc <= 1e-12
    return ok, f"E_i[D_i abar] error {worst_d:.1e}, increment-average gap {worst_inc:.1e}"


def _matched(method_a, method_b, ds, lam, gamma, epochs=1, seed=3):
    ob = Objective(ds, lam)
    f_star = 0.0  # only iterates are compared
    cfg = SolverConfig(gamma=gamma, epochs=epochs, seed=seed)
    return run_serial(method_a, ob, cfg, f_star=f_star).x, run_serial(method_b, ob, cfg, f_star=f_star).x


def check_dense_sparse():
    ds = make_synthetic(60, 8, dense=True, seed=5)
    gamma = 1 / (3 * problem_constants(ds, 0.05).L)
    a, b = _matched("saga", "sparse-saga", ds, 0.05, gamma)
    err = np.max(np.abs(a - b))
    return err <= 1e-12, f"max coordinate gap {err:.1e} after one epoch"


def check_lagged():
    ds = make_synthetic(80, 30, density=0.1, seed=6)
    gamma = 1 / (3 * problem_constants(ds, 0.05).L)
    a, b = _matched("saga", "lagged-saga", ds, 0.05, gamma)
    err = np.linalg.norm(a - b) / np.linalg.norm(a)
    return err <= 1e-8, f"relative gap {err:.1e} after one epoch"


def check_single_worker():
    ds = make_synthetic(100, 30, density=0.1, seed=7)
    ob = Objective(ds, 0.05)
    gamma = 1 / (3 * ob.constants.L)
    cfg = SolverConfig(gamma=gamma, epochs=2, seed=11)
    worst = 0.0
    for am, sm in (("asaga", "sparse-saga"), ("hogwild", "sgd"), ("kromagnon", "svrg")):
        a = run_async(am, ob, cfg, 1, f_star=0.0, instrument=False)
        s = run_serial(sm, ob, cfg, f_star=0.0)
        worst = max(worst, np.max(np.abs(a.x - s.x)))
    return worst <= 1e-12, f"max coordinate gap {worst:.1e} across asaga/hogwild/kromagnon"


def check_lost_updates(atomic=True, workers=4, k=1_000_000):
    bad = []
    shared = SharedState.zeros(3, 3)
    for name in ("x", "alpha", "alpha_bar"):
        got = stress_atomic_adds(getattr(shared, name), 1, workers, k, atomic=atomic)
        if got != workers * k:
            bad.append(f"{name}: {got:.0f} != {workers * k}")
    return not bad, "; ".join(bad) or f"{workers} workers x {k} unit adds exact for x, alpha, alpha_bar"


def check_rate():
    ds = make_synthetic(200, 50, density=0.1, seed=8)
    ob = Objective(ds, 0.02)
    c = ob.constants
    tr = run_serial("sparse-saga", ob, SolverConfig(gamma=1 / (5 * c.L), epochs=60, seed=0,
                                                     target_subopt=1e-10, record_every=50))
    rho = serial_rate(ds.n, c.kappa, 1.0)
    fitted = fitted_contraction(tr)
    ok = tr.final <= 1e-10 and fitted >= rho / 2
    return ok, f"fitted contraction {fitted:.3g} vs rho(1)/2 = {rho / 2:.3g}, final {tr.final:.1e}"


def check_stepsize():
    a0 = asaga_stepsize(0, 0.5, 10.0)
    return a0 == 1 / 32, f"a*(0) = {a0!r}"


def run_checks(inject: str | None = None):
    """Run every check; returns a list of :class:`CheckResult`."""
    if inject is not None and inject not in INJECTIONS:
        raise ValueError(f"unknown injection {inject!r}; expected one of {INJECTIONS}")
    checks = [
        ("gradient vs finite differences", check_gradient),
        ("sparse update unbiasedness", lambda: check_unbiasedness(scale=2.0 if inject == "bad-ddiag" else 1.0)),
        ("dense/sparse SAGA equivalence", check_dense_sparse),
        ("lagged SAGA equivalence", check_lagged),
        ("single-worker reduction", check_single_worker),
        ("lost-update freedom", lambda: check_lost_updates(atomic=inject != "non-atomic")),
        ("serial linear rate", check_rate),
        ("a*(0) = 1/32", check_stepsize),
    ]
    out = []
    for name, fn in checks:
        tic = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"raised {exc!r}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - tic))
    return out
