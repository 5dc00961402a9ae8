"""Sparse binary-classification datasets and their sparsity statistics.

Datasets are kept in CSR form (``indptr``, ``indices``, ``data``) with
labels in {-1, +1}. Indices are 0-based in memory and 1-based in libsvm
files.
"""
from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np
from scipy import sparse

__all__ = [
    "DatasetError",
    "SparseDataset",
    "SparsityProfile",
    "ProblemConstants",
    "parse_libsvm",
    "load_libsvm",
    "standardize",
    "sparsity_profile",
    "problem_constants",
    "make_synthetic",
    "save_dataset",
    "load_dataset",
]

CACHE_MAGIC = "asaga-dataset"
CACHE_VERSION = 1


class DatasetError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True, eq=False)
class SparseDataset:
    """CSR feature matrix with +/-1 labels.

    Parameters
    ----------
    indptr, indices, data : ndarray
        CSR arrays; row ``i`` is ``indices[indptr[i]:indptr[i+1]]``.
    labels : ndarray of float64
        One entry per sample, each -1.0 or +1.0.
    d : int
        Feature dimension.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    labels: np.ndarray
    d: int
    _hash: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.ascontiguousarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float64))
        object.__setattr__(self, "labels", np.ascontiguousarray(self.labels, dtype=np.float64))
        object.__setattr__(self, "d", int(self.d))
        self._validate()
        for arr in (self.indptr, self.indices, self.data, self.labels):
            arr.flags.writeable = False

    def _validate(self):
        n = self.labels.shape[0]
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0:
            raise DatasetError("indptr must have n + 1 entries starting at 0")
        if self.indptr[-1] != self.indices.shape[0] or self.indices.shape != self.data.shape:
            raise DatasetError("indptr, indices and data are inconsistent")
        sizes = np.diff(self.indptr)
        if np.any(sizes <= 0):
            i = int(np.flatnonzero(sizes <= 0)[0])
            raise DatasetError(f"sample {i} has an empty support")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.d):
            raise DatasetError(f"feature index out of range [0, {self.d})")
        steps = np.diff(self.indices)
        row_starts = np.zeros(self.indices.size, dtype=bool)
        row_starts[self.indptr[:-1]] = True
        if np.any(steps[~row_starts[1:]] <= 0):
            raise DatasetError("indices within a row must be strictly increasing")
        if not np.all(np.abs(self.labels) == 1.0):
            raise DatasetError("labels must be -1 or +1")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def nnz(self) -> int:
        return self.indices.shape[0]

    @property
    def density(self) -> float:
        return self.nnz / (self.n * self.d)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def to_csr(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.d))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    @classmethod
    def from_matrix(cls, X, labels) -> "SparseDataset":
        """Build from a dense array or scipy sparse matrix.

        Explicit zeros are dropped, so every stored entry is part of the
        sample's support.
        """
        X = sparse.csr_matrix(X, dtype=np.float64)
        X.eliminate_zeros()
        X.sort_indices()
        return cls(X.indptr, X.indices, X.data, np.asarray(labels, dtype=np.float64), X.shape[1])

    def fingerprint(self) -> str:
        """SHA-256 over the CSR arrays, labels and dimension."""
        if not self._hash:
            h = hashlib.sha256()
            h.update(np.int64(self.d).tobytes())
            for arr in (self.indptr, self.indices, self.data, self.labels):
                h.update(arr.tobytes())
            self._hash.append(h.hexdigest())
        return self._hash[0]


@dataclass(frozen=True)
class SparsityProfile:
    """Per-feature usage probabilities and the derived sparsity measures.

    ``delta_r`` is the largest number of samples sharing one feature and
    ``delta = delta_r / n``. ``d_diag`` holds the 1/p_v reweighting, with 0
    for features no sample uses.
    """

    p: np.ndarray
    delta_r: int
    delta: float
    d_diag: np.ndarray


@dataclass(frozen=True)
class ProblemConstants:
    L: float
    mu: float
    kappa: float


def _sign_label(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DatasetError(f"line {lineno}: cannot parse label {token!r}") from None
    return 1.0 if value > 0 else -1.0


def parse_libsvm(stream: IO[str] | Iterable[str], d: int | None = None) -> SparseDataset:
    """Parse libsvm/svmlight text into a :class:`SparseDataset`.

    Each non-empty line is ``<label> <idx>:<val> ...`` with 1-based,
    strictly increasing feature indices. Any strictly positive label maps
    to +1 and everything else to -1. ``d`` overrides the inferred
    dimension (the largest index seen).
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    labels: list[float] = []
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        labels.append(_sign_label(tokens[0], lineno))
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise DatasetError(f"line {lineno}: expected idx:value, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise DatasetError(f"line {lineno}: malformed feature {tok!r}") from None
            if idx < 1:
                raise DatasetError(f"line {lineno}: feature indices are 1-based, got {idx}")
            if idx <= prev:
                raise DatasetError(f"line {lineno}: indices not increasing ({prev} then {idx})")
            prev = idx
            if val != 0.0:
                indices.append(idx - 1)
                values.append(val)
        if len(indices) == indptr[-1]:
            raise DatasetError(f"line {lineno}: sample {len(labels) - 1} has an empty support")
        indptr.append(len(indices))
    if not labels:
        raise DatasetError("no samples found")
    seen = max(indices) + 1
    if d is None:
        d = seen
    elif d < seen:
        raise DatasetError(f"dimension override {d} smaller than largest index {seen}")
    return SparseDataset(np.array(indptr), np.array(indices), np.array(values), np.array(labels), d)


def load_libsvm(path: str | os.PathLike, d: int | None = None) -> SparseDataset:
    """Read a libsvm file, or a binary cache written by :func:`save_dataset`."""
    path = os.fspath(path)
    if path.endswith(".npz"):
        return load_dataset(path)
    with open(path, "r") as fh:
        return parse_libsvm(fh, d=d)


def save_dataset(dataset: SparseDataset, path: str | os.PathLike) -> None:
    """Write the CSR arrays to an ``.npz`` cache with a versioned header."""
    np.savez(
        path,
        magic=np.array(CACHE_MAGIC),
        version=np.int64(CACHE_VERSION),
        d=np.int64(dataset.d),
        indptr=dataset.indptr,
        indices=dataset.indices,
        data=dataset.data,
        labels=dataset.labels,
    )


def load_dataset(path: str | os.PathLike) -> SparseDataset:
    with np.load(path, allow_pickle=False) as f:
        if str(f["magic"]) != CACHE_MAGIC:
            raise DatasetError(f"{path}: not a dataset cache")
        if int(f["version"]) != CACHE_VERSION:
            raise DatasetError(f"{path}: unsupported cache version {int(f['version'])}")
        return SparseDataset(f["indptr"], f["indices"], f["data"], f["labels"], int(f["d"]))


def standardize(dataset: SparseDataset) -> SparseDataset:
    """Z-score every column and store the result densely.

    Constant columns are dropped, which reduces ``d``. Variance is the
    population variance (ddof=0), so retained columns have mean 0 and
    variance 1 exactly in exact arithmetic.
    """
    X = dataset.to_dense()
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    keep = std > 0
    Z = (X[:, keep] - mean[keep]) / std[keep]
    n, d = Z.shape
    if d == 0:
        raise DatasetError("every feature is constant")
    # dense storage: zeros that happen to land exactly on 0 stay in the support
    indptr = np.arange(0, n * d + 1, d, dtype=np.int64)
    indices = np.tile(np.arange(d, dtype=np.int64), n)
    return SparseDataset(indptr, indices, Z.ravel(), dataset.labels.copy(), d)


def sparsity_profile(dataset: SparseDataset) -> SparsityProfile:
    counts = np.bincount(dataset.indices, minlength=dataset.d)
    n = dataset.n
    p = counts / n
    d_diag = np.zeros(dataset.d)
    used = counts > 0
    d_diag[used] = n / counts[used]
    delta_r = int(counts.max())
    return SparsityProfile(p=p, delta_r=delta_r, delta=delta_r / n, d_diag=d_diag)


def problem_constants(dataset: SparseDataset, lam: float) -> ProblemConstants:
    """Smoothness and strong convexity of the L2-regularized logistic loss."""
    if not lam > 0:
        raise ValueError(f"regularization must be positive, got {lam}")
    sq = np.add.reduceat(dataset.data**2, dataset.indptr[:-1])
    L = float(sq.max()) / 4.0 + lam
    return ProblemConstants(L=L, mu=lam, kappa=L / lam)


def make_synthetic(
    n: int,
    d: int,
    density: float = 0.05,
    *,
    dense: bool = False,
    label_noise: float = 0.1,
    row_norm: float | None = 1.0,
    seed: int = 0,
) -> SparseDataset:
    """Random logistic-regression instance with controllable sparsity.

    Each row gets ``1 + Binomial(d - 1, density)`` distinct features with
    Gaussian values (all ``d`` when ``dense``), optionally rescaled to
    ``row_norm``. Labels follow a random linear model and are flipped with
    probability ``label_noise``.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(d)
    indptr = [0]
    indices = []
    values = []
    for _ in range(n):
        k = d if dense else 1 + rng.binomial(d - 1, density)
        cols = np.arange(d) if dense else np.sort(rng.choice(d, size=k, replace=False))
        vals = rng.standard_normal(k)
        vals[vals == 0] = 1.0
        if row_norm is not None:
            vals *= row_norm / np.linalg.norm(vals)
        indices.append(cols)
        values.append(vals)
        indptr.append(indptr[-1] + k)
    indices = np.concatenate(indices)
    values = np.concatenate(values)
    indptr = np.array(indptr)
    margins = np.add.reduceat(values * w[indices], indptr[:-1])
    labels = np.where(margins >= 0, 1.0, -1.0)
    flip = rng.random(n) < label_noise
    labels[flip] *= -1
    return SparseDataset(indptr, indices, values, labels, d)
