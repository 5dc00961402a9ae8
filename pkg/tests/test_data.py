import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asaga.data import (
    DatasetError,
    SparseDataset,
    load_dataset,
    load_libsvm,
    make_synthetic,
    parse_libsvm,
    problem_constants,
    save_dataset,
    sparsity_profile,
    standardize,
)


def test_parse_single_line():
    ds = parse_libsvm("+1 3:0.5 7:1.2\n")
    assert ds.n == 1 and ds.d == 7
    cols, vals = ds.row(0)
    assert cols.tolist() == [2, 6]
    assert vals.tolist() == [0.5, 1.2]
    assert ds.labels.tolist() == [1.0]


def test_parse_negative_label():
    ds = parse_libsvm("-1 1:2.0")
    assert ds.row(0)[0].tolist() == [0]
    assert ds.row(0)[1].tolist() == [2.0]
    assert ds.labels.tolist() == [-1.0]


@pytest.mark.parametrize("label,sign", [("0", -1), ("1", 1), ("2", 1), ("-1", -1), ("+1", 1), ("0.5", 1)])
def test_label_mapping(label, sign):
    assert parse_libsvm(f"{label} 1:1").labels[0] == sign


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("+1 5:1 3:1", "not increasing"),
        ("+1 3:1 3:2", "not increasing"),
        ("+1 3-1", "expected idx:value"),
        ("+1 a:1", "malformed"),
        ("x 1:1", "cannot parse label"),
        ("+1 0:1", "1-based"),
        ("+1 1:1\n-1\n", "empty support"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(DatasetError, match=fragment):
        parse_libsvm(text)


def test_parse_error_reports_line_number():
    with pytest.raises(DatasetError, match="line 3"):
        parse_libsvm("+1 1:1\n\n-1 4:1 2:1\n")


def test_parse_skips_comments_and_blank_lines():
    ds = parse_libsvm("# header\n+1 1:1 # trailing\n\n-1 2:3\n")
    assert ds.n == 2 and ds.d == 2


def test_dimension_override():
    assert parse_libsvm("+1 2:1", d=10).d == 10
    with pytest.raises(DatasetError):
        parse_libsvm("+1 5:1", d=3)


def test_load_libsvm_and_binary_cache(tmp_path):
    p = tmp_path / "toy.svm"
    p.write_text("1 1:0.5 4:2\n0 2:1\n")
    ds = load_libsvm(p)
    assert ds.labels.tolist() == [1.0, -1.0]
    cache = tmp_path / "toy.npz"
    save_dataset(ds, cache)
    back = load_dataset(cache)
    assert back.fingerprint() == ds.fingerprint()
    assert load_libsvm(cache).fingerprint() == ds.fingerprint()


def test_cache_rejects_foreign_npz(tmp_path):
    p = tmp_path / "other.npz"
    np.savez(p, magic=np.array("nope"), version=np.int64(1))
    with pytest.raises(DatasetError):
        load_dataset(p)


def test_dataset_validation():
    with pytest.raises(DatasetError, match="empty support"):
        SparseDataset(np.array([0, 1, 1]), np.array([0]), np.array([1.0]), np.array([1.0, 1.0]), 1)
    with pytest.raises(DatasetError, match="out of range"):
        SparseDataset(np.array([0, 1]), np.array([3]), np.array([1.0]), np.array([1.0]), 2)
    with pytest.raises(DatasetError, match="labels"):
        SparseDataset(np.array([0, 1]), np.array([0]), np.array([1.0]), np.array([0.0]), 1)
    with pytest.raises(DatasetError, match="increasing"):
        SparseDataset(np.array([0, 2]), np.array([1, 0]), np.array([1.0, 1.0]), np.array([1.0]), 2)


def test_dataset_is_read_only(tiny):
    with pytest.raises(ValueError):
        tiny.data[0] = 3.0


def test_from_matrix_drops_explicit_zeros():
    ds = SparseDataset.from_matrix(np.array([[0.0, 2.0], [1.0, 0.0]]), [1, -1])
    assert ds.nnz == 2
    assert ds.to_dense().tolist() == [[0.0, 2.0], [1.0, 0.0]]


def test_profile_two_samples(tiny):
    prof = sparsity_profile(tiny)
    assert prof.p.tolist() == [1.0, 0.5]
    assert prof.delta_r == 2
    assert prof.delta == 1.0
    assert prof.d_diag.tolist() == [1.0, 2.0]


def test_profile_dense():
    prof = sparsity_profile(make_synthetic(7, 4, dense=True))
    assert np.all(prof.p == 1.0) and prof.delta == 1.0
    assert np.all(prof.d_diag == 1.0)


def test_profile_disjoint_singletons():
    ds = SparseDataset(np.arange(4), np.arange(3), np.ones(3), np.array([1.0, -1.0, 1.0]), 3)
    prof = sparsity_profile(ds)
    assert np.allclose(prof.p, 1 / 3)
    assert prof.delta == pytest.approx(1 / 3)


def test_unused_feature_gets_zero_weight():
    ds = parse_libsvm("+1 1:1\n-1 3:1\n")
    prof = sparsity_profile(ds)
    assert prof.p[1] == 0.0 and prof.d_diag[1] == 0.0


@st.composite
def datasets(draw, max_n=15, max_d=8):
    n = draw(st.integers(1, max_n))
    d = draw(st.integers(1, max_d))
    density = draw(st.floats(0.0, 1.0))
    seed = draw(st.integers(0, 2**31))
    return make_synthetic(n, d, density, seed=seed)


@settings(max_examples=60, deadline=None)
@given(datasets(), st.randoms(use_true_random=False))
def test_profile_invariants(ds, rnd):
    prof = sparsity_profile(ds)
    used = prof.p > 0
    assert 1 / ds.n <= prof.delta <= 1
    assert np.all(np.abs(prof.d_diag[used] * prof.p[used] - 1) <= 1e-12)
    assert prof.delta_r == round(ds.n * prof.p.max())
    # row order does not matter
    perm = list(range(ds.n))
    rnd.shuffle(perm)
    X = ds.to_csr()[perm]
    shuffled = SparseDataset.from_matrix(X, ds.labels[perm])
    prof2 = sparsity_profile(shuffled)
    assert np.array_equal(prof.p, prof2.p) and prof.delta_r == prof2.delta_r


def test_standardize_two_points():
    ds = SparseDataset.from_matrix(np.array([[1.0], [3.0]]), [1, -1])
    assert standardize(ds).to_dense().ravel().tolist() == [-1.0, 1.0]


def test_standardize_drops_constant_column():
    X = np.array([[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    z = standardize(SparseDataset.from_matrix(X, [1, -1, 1]))
    assert z.d == 1 and z.density == 1.0


def test_standardize_three_points():
    z = standardize(SparseDataset.from_matrix(np.array([[1e-300], [1.0], [2.0]]), [1, 1, -1]))
    col = z.to_dense()[:, 0]
    # (x - 1) / sqrt(2/3)
    assert np.allclose(col, np.array([-1.0, 0.0, 1.0]) * np.sqrt(1.5), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(datasets(max_n=20))
def test_standardize_moments(ds):
    try:
        z = standardize(ds)
    except DatasetError:
        return  # every column constant
    Z = z.to_dense()
    assert np.all(np.abs(Z.mean(axis=0)) <= 1e-10)
    assert np.all(np.abs(Z.var(axis=0) - 1) <= 1e-10)


def test_problem_constants_single_sample():
    ds = SparseDataset.from_matrix(np.array([[2.0, 0.0]]), [1])
    c = problem_constants(ds, 1.0)
    assert (c.L, c.mu, c.kappa) == (2.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        problem_constants(ds, 0.0)


def test_synthetic_is_seeded():
    a = make_synthetic(30, 10, 0.2, seed=4)
    b = make_synthetic(30, 10, 0.2, seed=4)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != make_synthetic(30, 10, 0.2, seed=5).fingerprint()
    assert np.allclose(np.linalg.norm(a.to_dense(), axis=1), 1.0)
