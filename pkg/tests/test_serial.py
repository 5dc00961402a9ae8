import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asaga import _kernels as K
from asaga.data import SparseDataset, make_synthetic
from asaga.objective import Objective
from asaga.serial import (
    SerialState,
    SolverConfig,
    flush_lag,
    run_serial,
    saga_dense_step,
    saga_lagged_step,
    saga_sparse_step,
    seed_stream,
    sgd_step,
    svrg_epoch,
    svrg_snapshot,
    svrg_step,
)


def _splitmix(seed, count, n):
    mask = 2**64 - 1
    s, out = seed, []
    for _ in range(count):
        s = (s + 0x9E3779B97F4A7C15) & mask
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append((z ^ (z >> 31)) % n)
    return out


def test_sampler_matches_documented_generator():
    assert K.draw_indices(seed_stream(12345), 97, 50).tolist() == _splitmix(12345, 50, 97)


def test_worker_streams_differ():
    a = K.draw_indices(seed_stream(7, 0), 1000, 20)
    b = K.draw_indices(seed_stream(7, 1), 1000, 20)
    assert not np.array_equal(a, b)


def _state(ds, lam, x=None):
    st_ = SerialState.initial(Objective(ds, lam))
    if x is not None:
        st_.x[:] = x
    return st_


def test_sgd_zero_step_is_identity(sparse_small):
    st_ = _state(sparse_small, 0.1, np.random.default_rng(0).normal(size=sparse_small.d))
    before = st_.x.copy()
    sgd_step(st_, 3, 0.0)
    assert np.array_equal(st_.x, before)


def test_sgd_one_step_value():
    # sigma(0) = -1/2, so the step from 0 with gamma = 1 and no regularization is +1/2
    ds = SparseDataset.from_matrix(np.array([[1.0]]), [1])
    ob = Objective(ds, 1.0)
    ob.lam = 0.0
    st_ = SerialState.initial(ob)
    sgd_step(st_, 0, 1.0)
    assert st_.x.tolist() == [0.5]


def test_sgd_dense_matches_full_regularizer(dense_small):
    rng = np.random.default_rng(1)
    x = rng.normal(size=dense_small.d)
    st_ = _state(dense_small, 0.3, x)
    sgd_step(st_, 5, 0.2)
    ob = st_.objective
    cols, vals = dense_small.row(5)
    expected = x - 0.2 * (ob.gradient_scalar(x, 5) * vals + 0.3 * x)
    assert np.allclose(st_.x, expected, atol=1e-12)


def test_saga_first_step_is_sgd_with_full_regularizer(sparse_small):
    x = np.random.default_rng(2).normal(size=sparse_small.d)
    st_ = _state(sparse_small, 0.2, x)
    saga_dense_step(st_, 4, 0.3)
    cols, vals = sparse_small.row(4)
    g = np.zeros(sparse_small.d)
    g[cols] = st_.objective.gradient_scalar(x[cols], 4) * vals
    assert np.allclose(st_.x, x - 0.3 * (g + 0.2 * x), atol=1e-14)
    assert st_.alpha[4] == st_.objective.gradient_scalar(x[cols], 4)


def test_saga_single_sample_becomes_gradient_descent():
    ds = SparseDataset.from_matrix(np.array([[1.0, -2.0]]), [1])
    st_ = _state(ds, 0.5, np.array([0.3, 0.1]))
    saga_dense_step(st_, 0, 0.1)
    x = st_.x.copy()
    saga_dense_step(st_, 0, 0.1)
    assert np.allclose(st_.x, x - 0.1 * st_.objective.full_gradient(x), atol=1e-15)


def test_sparse_step_touches_only_support(tiny):
    st_ = _state(tiny, 0.1, np.array([0.4, -0.7]))
    saga_sparse_step(st_, 0, 0.5)
    assert st_.x[1] == -0.7 and st_.x[0] != 0.4


def _copy(st_):
    return SerialState(st_.objective, st_.x.copy(), st_.alpha.copy(), st_.alpha_bar.copy(),
                       st_.lag_counters.copy(), st_.rng.copy(), st_.t, st_.x_ref, st_.sigma_ref,
                       st_.grad_ref, _buf=np.zeros_like(st_.x))


def _average_increment(st_, step, gamma=0.1):
    out = np.zeros_like(st_.x)
    for i in range(st_.objective.n):
        c = _copy(st_)
        step(c, i, gamma)
        out += c.x - st_.x
    return out / st_.objective.n


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 10), st.integers(1, 8))
def test_sparse_and_dense_increments_agree_in_expectation(seed, n, d):
    ds = make_synthetic(n, d, 0.3, seed=seed)
    rng = np.random.default_rng(seed)
    st_ = _state(ds, 0.2)
    st_.x[:] = rng.normal(size=d) * (st_.objective.profile.p > 0)
    st_.alpha[:] = rng.uniform(-1, 1, size=n)
    st_.alpha_bar[:] = st_.recomputed_alpha_bar()
    sparse = _average_increment(st_, saga_sparse_step)
    dense = _average_increment(st_, saga_dense_step)
    assert np.max(np.abs(sparse - dense)) <= 1e-12


def _at_optimum(ds, lam):
    ob = Objective(ds, lam)
    x_star = ob.optimum()
    st_ = SerialState.initial(ob, x0=x_star)
    st_.alpha[:] = ob.sigmas(x_star)
    st_.alpha_bar[:] = st_.recomputed_alpha_bar()
    return st_


@pytest.mark.parametrize("step", [saga_sparse_step, saga_dense_step])
def test_optimum_is_stationary_in_expectation(step, sparse_small):
    st_ = _at_optimum(sparse_small, 0.05)
    assert np.linalg.norm(_average_increment(st_, step, 0.5)) <= 1e-10


def test_solved_instance_stays_put(sparse_small):
    st_ = _at_optimum(sparse_small, 0.05)
    x0 = st_.x.copy()
    gamma = 1 / (5 * st_.objective.constants.L)
    for i in K.draw_indices(seed_stream(1), sparse_small.n, 10 * sparse_small.n):
        saga_dense_step(st_, i, gamma)
    assert np.max(np.abs(st_.x - x0)) <= 1e-10


def test_alpha_bar_stays_consistent(sparse_small):
    ob = Objective(sparse_small, 0.05)
    tr_state = SerialState.initial(ob)
    gamma = 1 / (3 * ob.constants.L)
    for i in K.draw_indices(seed_stream(2), sparse_small.n, 5000):
        saga_sparse_step(tr_state, i, gamma)
    fresh = tr_state.recomputed_alpha_bar()
    assert np.linalg.norm(tr_state.alpha_bar - fresh) <= 1e-8 * np.linalg.norm(fresh)


def test_lagged_with_immediate_flush_is_dense(sparse_small):
    ob = Objective(sparse_small, 0.05)
    a, b = SerialState.initial(ob), SerialState.initial(ob)
    gamma = 1 / (3 * ob.constants.L)
    for i in K.draw_indices(seed_stream(3), sparse_small.n, 300):
        saga_dense_step(a, i, gamma)
        saga_lagged_step(b, i, gamma)
        flush_lag(b, gamma)
    assert np.max(np.abs(a.x - b.x)) <= 1e-12


def test_lagged_epoch_then_flush_matches_dense(sparse_small):
    cfg = SolverConfig(gamma=0.5, epochs=1, seed=4)
    ob = Objective(sparse_small, 0.05)
    dense = run_serial("saga", ob, cfg, f_star=0.0).x
    lagged = run_serial("lagged-saga", ob, cfg, f_star=0.0).x
    assert np.linalg.norm(dense - lagged) <= 1e-8 * np.linalg.norm(dense)


def test_untouched_coordinate_gets_one_k_fold_correction():
    x = np.array([0.8])
    abar = np.array([0.3])
    gamma, lam, k = 0.1, 0.2, 7
    expected = 0.8
    for _ in range(k):
        expected -= gamma * (0.3 + lam * expected)
    K.lag_catch_up(x, abar, lam, gamma, 0, k)
    assert x[0] == pytest.approx(expected, rel=1e-13)
    x0 = np.array([0.8])
    K.lag_catch_up(x0, abar, 0.0, gamma, 0, k)
    assert x0[0] == pytest.approx(0.8 - gamma * k * 0.3, rel=1e-15)


def test_svrg_first_inner_step_at_reference(sparse_small):
    ob = Objective(sparse_small, 0.05)
    st_ = SerialState.initial(ob, x0=np.random.default_rng(5).normal(size=ob.d))
    svrg_snapshot(st_)
    x = st_.x.copy()
    svrg_step(st_, 9, 0.2)
    cols, _ = sparse_small.row(9)
    dd = ob.profile.d_diag
    grad = ob.data_gradient(x)
    expected = x.copy()
    expected[cols] -= 0.2 * (dd[cols] * grad[cols] + 0.05 * dd[cols] * x[cols])
    assert np.allclose(st_.x, expected, atol=1e-14)


def test_svrg_inner_step_is_unbiased(sparse_small):
    ob = Objective(sparse_small, 0.05)
    rng = np.random.default_rng(6)
    st_ = SerialState.initial(ob, x0=rng.normal(size=ob.d) * (ob.profile.p > 0))
    svrg_snapshot(st_, x_ref=rng.normal(size=ob.d))
    avg = _average_increment(st_, svrg_step, 0.1)
    assert np.allclose(avg, -0.1 * ob.full_gradient(st_.x), atol=1e-12)


def test_svrg_dense_is_textbook(dense_small):
    ob = Objective(dense_small, 0.1)
    rng = np.random.default_rng(7)
    st_ = SerialState.initial(ob, x0=rng.normal(size=ob.d))
    x_ref = rng.normal(size=ob.d)
    svrg_snapshot(st_, x_ref=x_ref)
    x = st_.x.copy()
    svrg_step(st_, 3, 0.1)
    _, vals = dense_small.row(3)
    g = lambda z: ob.gradient_scalar(z, 3) * vals + 0.1 * z
    expected = x - 0.1 * (g(x) - g(x_ref) + ob.full_gradient(x_ref))
    assert np.allclose(st_.x, expected, atol=1e-14)


def test_svrg_epoch_requires_positive_m(sparse_small):
    st_ = SerialState.initial(Objective(sparse_small, 0.05))
    with pytest.raises(ValueError):
        svrg_epoch(st_, 0.1, 0)
    svrg_epoch(st_, 0.1, 50)
    assert st_.t == 50


@pytest.mark.parametrize("method", ["sgd", "saga", "sparse-saga", "lagged-saga", "svrg"])
def test_run_serial_is_deterministic(method, sparse_small):
    cfg = SolverConfig(gamma=0.5, epochs=3, seed=9, lam=0.05)
    a = run_serial(method, sparse_small, cfg)
    b = run_serial(method, sparse_small, cfg)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.suboptimality, b.suboptimality)
    assert a.iterations.tolist() == [0, 200, 400, 600]


def test_variance_reduced_methods_converge(sparse_small):
    ob = Objective(sparse_small, 0.05)
    gamma = 1 / (3 * ob.constants.L)
    for method in ("saga", "sparse-saga", "lagged-saga", "svrg"):
        tr = run_serial(method, ob, SolverConfig(gamma=gamma, epochs=40, seed=0))
        assert tr.final <= 1e-10, method
    sgd = run_serial("sgd", ob, SolverConfig(gamma=gamma, epochs=40, seed=0))
    assert sgd.final > 1e-6


def test_target_stops_early(sparse_small):
    ob = Objective(sparse_small, 0.05)
    tr = run_serial("sparse-saga", ob, SolverConfig(gamma=1.0, epochs=50, target_subopt=1e-4))
    assert tr.status == "target" and tr.final <= 1e-4 and tr.iterations[-1] < 50 * ob.n


def test_overshoot_is_reported_as_divergence():
    ds = make_synthetic(100, 20, 0.3, seed=1)
    ob = Objective(ds, 1e-3)
    gamma = 100 * 10 / ob.constants.L
    tr = run_serial("saga", ob, SolverConfig(gamma=gamma, epochs=20, seed=0))
    assert tr.status == "diverged"
    assert tr.suboptimality[-1] > 1e6 * tr.suboptimality[0] or not np.isfinite(tr.suboptimality[-1])


def test_unknown_method(sparse_small):
    with pytest.raises(ValueError):
        run_serial("adam", sparse_small, SolverConfig(gamma=0.1))


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(gamma=0.1, epochs=0)
    with pytest.raises(ValueError):
        SolverConfig(gamma=0.1, record_every=0)
