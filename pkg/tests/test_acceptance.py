"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed in the terminal
summary (see ``conftest.py``) and directly when run with ``-s``. Run just
this file with ``pytest tests/test_acceptance.py -v``.
"""
import math
import statistics
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asaga.asynchronous import estimate_overlap, run_async, simulate_lockstep, stress_atomic_adds, SharedState
from asaga.bench import fitted_contraction, gridsearch, measure_speedup
from asaga.data import make_synthetic
from asaga.objective import Objective
from asaga.serial import SolverConfig, run_serial
from asaga.theory import asaga_stepsize, serial_rate
from asaga.verify import check_dense_sparse, check_gradient, check_lagged, check_unbiasedness

RESULTS = []


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def sparse_instance():
    # the shared sparse desk instance of the speedup, overlap and end-to-end criteria
    return Objective(make_synthetic(2000, 500, density=0.01, seed=1), 0.01)


def test_c01_gradient_check():
    tic = time.perf_counter()
    ok, detail = check_gradient(instances=100)
    secs = time.perf_counter() - tic
    record(1, "analytic vs finite-difference gradients", ok and secs < 5, f"{detail}, {secs:.2f}s")


def test_c02_unbiasedness():
    ok, detail = check_unbiasedness(instances=20)
    record(2, "sparse update unbiasedness by enumeration", ok, detail)


def test_c03_serial_rate():
    tic = time.perf_counter()
    ob = Objective(make_synthetic(200, 50, density=0.1, seed=3), 0.01)
    c = ob.constants
    cfg = SolverConfig(gamma=1 / (5 * c.L), epochs=400, seed=0, target_subopt=1e-10, record_every=20)
    tr = run_serial("sparse-saga", ob, cfg)
    rho = serial_rate(ob.n, c.kappa, 1.0)
    fitted = fitted_contraction(tr)
    secs = time.perf_counter() - tic
    ok = c.kappa <= 100 and tr.final <= 1e-10 and fitted >= rho / 2 and secs < 10
    record(3, "serial Sparse SAGA linear rate", ok,
           f"kappa {c.kappa:.1f}, final {tr.final:.1e}, fitted {fitted:.2e} vs rho/2 {rho / 2:.2e}, {secs:.1f}s")


def test_c04_dense_sparse():
    ok, detail = check_dense_sparse()
    record(4, "dense and sparse SAGA agree on dense data", ok, detail)


def test_c05_lagged():
    ok, detail = check_lagged()
    record(5, "lagged SAGA after flush matches dense SAGA", ok, detail)


def test_c06_single_worker():
    ob = Objective(make_synthetic(300, 80, density=0.05, seed=2), 0.01)
    cfg = SolverConfig(gamma=1 / (3 * ob.constants.L), epochs=3, seed=5)
    gaps = {}
    for am, sm in (("asaga", "sparse-saga"), ("hogwild", "sgd"), ("kromagnon", "svrg")):
        a = run_async(am, ob, cfg, 1, f_star=0.0)
        s = run_serial(sm, ob, cfg, f_star=0.0)
        gaps[am] = float(np.max(np.abs(a.x - s.x)))
    ok = max(gaps.values()) <= 1e-12
    record(6, "one worker reproduces the serial solver", ok,
           ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()))


def test_c07_lost_updates():
    shared = SharedState.zeros(4, 4)
    sums = {name: stress_atomic_adds(getattr(shared, name), 1, 4, 100_000) for name in ("x", "alpha", "alpha_bar")}
    ok = all(v == 400_000.0 for v in sums.values())
    record(7, "4 x 100000 atomic unit adds are exact", ok, ", ".join(f"{k}={v:.0f}" for k, v in sums.items()))


@pytest.mark.slow
def test_c08_cas_necessity():
    ob = Objective(make_synthetic(20000, 300, dense=True, seed=2), 1e-5)
    cfg = SolverConfig(gamma=1 / (3 * ob.constants.L), epochs=60, seed=0)
    f_star = ob.f_star()
    cas = run_async("asaga", ob, cfg, 4, f_star=f_star, instrument=False)
    plain = run_async("asaga", ob, cfg, 4, f_star=f_star, instrument=False, write_mode="plain")
    # below ~1e-15 the loss itself cannot resolve differences
    ratio = plain.final / max(cas.final, 1e-15)
    record(8, "plain writes stall far above the atomic run", ratio >= 100,
           f"atomic {cas.final:.1e}, plain {plain.final:.1e}, ratio {ratio:.1e}")


def test_c09_theoretical_speedup(sparse_instance):
    tic = time.perf_counter()
    ob = sparse_instance
    gamma = asaga_stepsize(3, ob.profile.delta, ob.constants.kappa) / ob.constants.L
    cfg = SolverConfig(gamma=gamma, epochs=80, seed=0, record_every=500)
    report, traces = measure_speedup("asaga", ob, cfg, [1, 4], repeats=3, target=1e-5)
    it1 = report.rows[0].iterations
    it4 = report.rows[1].iterations
    secs = time.perf_counter() - tic
    ok = it1 is not None and it4 is not None and abs(it4 - it1) <= 0.25 * it1 and secs < 60
    record(9, "4-worker iterations to 1e-5 within 25% of 1 worker", ok,
           f"median iterations {it1} vs {it4}, {secs:.1f}s")


def test_c10_overlap(sparse_instance):
    ob = sparse_instance
    # on few cores the overlap comes from preemption, which needs a run long enough to see it
    cfg = SolverConfig(gamma=1e-3 / ob.constants.L, epochs=50, seed=0)
    medians = []
    for p in (1, 2, 4):
        taus = [run_async("asaga", ob, replace(cfg, seed=r), p, counter_stride=1).tau_hat for r in range(3)]
        medians.append(statistics.median(taus))
    monotone = all(b >= a for a, b in zip(medians, medians[1:]))
    harness = {}
    for p in (1, 2, 4, 8):
        _, samples = simulate_lockstep(ob, cfg.gamma, p, 4000)
        harness[p] = estimate_overlap(samples)
    covered = all(t >= p - 2 for p, t in harness.items())
    record(10, "overlap grows with workers and meets p-1 on equal-cost workers", monotone and covered,
           f"threads median tau_hat {medians} for 1,2,4; equal-cost {harness}")


@settings(max_examples=1000, deadline=None)
@given(st.floats(0, 1e3), st.floats(1e-3, 1e3), st.floats(1e-4, 1.0), st.floats(1.0, 1e5))
def _decreasing(tau, dt, delta, kappa):
    assert asaga_stepsize(tau + dt, delta, kappa) < asaga_stepsize(tau, delta, kappa)


def test_c11_theory():
    exact = asaga_stepsize(0, 0.37, 12.0) == 1 / 32 and serial_rate(10, 5, 1) == 1 / 50
    try:
        _decreasing()
        monotone = True
    except AssertionError:
        monotone = False
    record(11, "step-size and rate formulas", exact and monotone,
           "a*(0) = 1/32, rho(10,5,1) = 1/50, a* decreasing on 1000 random inputs")


@pytest.mark.slow
def test_c12_end_to_end(sparse_instance):
    ob = sparse_instance
    L = ob.constants.L
    gamma = asaga_stepsize(3, ob.profile.delta, ob.constants.kappa) / L
    asaga = run_async("asaga", ob, SolverConfig(gamma=gamma, epochs=60, seed=0), 4)
    # Hogwild's noise floor shrinks with the step, so its best step sits far below 1/L; a
    # log-spaced grid brackets it with an interior winner
    steps = np.geomspace(1e-6 / L, 1e-1 / L, 10)
    grid = gridsearch("hogwild", ob, SolverConfig(gamma=1.0, epochs=60, seed=0), 4, grid=steps)
    best = min(f for f, bad in zip(grid.finals, grid.diverged) if not bad)
    ok = asaga.final <= 1e-8 and best > 1e-8 and math.isfinite(best) and not grid.boundary
    record(12, "ASAGA reaches 1e-8 while Hogwild stalls", ok,
           f"asaga {asaga.final:.1e}; hogwild best {best:.1e} at gamma {grid.best_gamma:.3g}"
           f"{' (grid boundary)' if grid.boundary else ''}")
