"""L2-regularized logistic regression and its reference optimum.

The data part of each per-sample gradient is ``sigma_i(x) * a_i`` with the
scalar ``sigma_i(x) = -b_i / (1 + exp(b_i a_i^T x))``; solvers store only
that scalar per sample. The regularizer ``lam * x`` is never folded into the
gradient memory.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from . import _kernels as K
from .data import SparseDataset, SparsityProfile, problem_constants, sparsity_profile

__all__ = [
    "ConvergenceError",
    "Objective",
    "solve_reference",
    "default_cache_dir",
    "reference_cache_path",
    "REFERENCE_CACHE_VERSION",
]

logger = logging.getLogger(__name__)

REFERENCE_CACHE_VERSION = 1
NEWTON_MAX_DIM = 2000


class ConvergenceError(RuntimeError):
    """The reference solver hit its iteration cap before reaching ``tol``."""


@dataclass(eq=False)
class Objective:
    """``(1/n) sum_i log(1 + exp(-b_i a_i^T x)) + (lam/2) ||x||^2``.

    ``lam`` defaults to ``1/n``.
    """

    dataset: SparseDataset
    lam: float | None = None
    profile: SparsityProfile = field(default=None, repr=False)

    def __post_init__(self):
        if self.lam is None:
            self.lam = 1.0 / self.dataset.n
        self.lam = float(self.lam)
        if not self.lam > 0:
            raise ValueError(f"regularization must be positive, got {self.lam}")
        if self.profile is None:
            self.profile = sparsity_profile(self.dataset)
        self._f_star = None

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def d(self) -> int:
        return self.dataset.d

    @property
    def constants(self):
        return problem_constants(self.dataset, self.lam)

    def margins(self, x: np.ndarray) -> np.ndarray:
        ds = self.dataset
        return K.all_margins(ds.indptr, ds.indices, ds.data, np.ascontiguousarray(x, dtype=np.float64))

    def loss(self, x: np.ndarray) -> float:
        z = -self.dataset.labels * self.margins(x)
        # softplus(z) = max(z, 0) + log1p(exp(-|z|))
        data_term = np.mean(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))))
        return float(data_term + 0.5 * self.lam * np.dot(x, x))

    def gradient_scalar(self, x_restricted: np.ndarray, i: int) -> float:
        """sigma_i from the values of x on the support of sample i."""
        _, vals = self.dataset.row(i)
        return float(K.sigma(float(np.dot(x_restricted, vals)), self.dataset.labels[i]))

    def sigmas(self, x: np.ndarray) -> np.ndarray:
        b = self.dataset.labels
        return -b * expit(-b * self.margins(x))

    def data_gradient(self, x: np.ndarray) -> np.ndarray:
        """``(1/n) sum_i sigma_i(x) a_i``, the gradient without the regularizer."""
        return self.dataset.to_csr().T @ self.sigmas(x) / self.n

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.data_gradient(x) + self.lam * np.asarray(x)

    def suboptimality(self, x: np.ndarray) -> float:
        return self.loss(x) - self.f_star()

    def optimum(self, **kwargs) -> np.ndarray:
        return solve_reference(self.dataset, self.lam, **kwargs)

    def f_star(self, **kwargs) -> float:
        if self._f_star is None:
            self._f_star = self.loss(self.optimum(**kwargs))
        return self._f_star

    def set_optimum(self, x_star: np.ndarray) -> None:
        self._f_star = self.loss(x_star)


def default_cache_dir() -> Path:
    root = os.environ.get("ASAGA_CACHE_DIR")
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "asaga"


def reference_cache_path(dataset: SparseDataset, lam: float, tol: float = 1e-12,
                         cache_dir: str | os.PathLike | None = None) -> Path:
    """Where :func:`solve_reference` stores the optimum for these inputs."""
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    return _cache_path(cache_dir, dataset, float(lam), float(tol))


def _cache_path(cache_dir: Path, dataset: SparseDataset, lam: float, tol: float) -> Path:
    key = f"{dataset.fingerprint()[:24]}-lam{lam.hex()}-tol{float(tol).hex()}"
    return cache_dir / f"xstar-{key}.npz"


def _read_cache(path: Path, dataset: SparseDataset, lam: float, tol: float):
    try:
        with np.load(path, allow_pickle=False) as f:
            if (
                int(f["version"]) == REFERENCE_CACHE_VERSION
                and str(f["dataset_hash"]) == dataset.fingerprint()
                and float(f["lam"]) == lam
                and float(f["tol"]) == tol
                and int(f["d"]) == dataset.d
            ):
                return np.array(f["x"])
    except (OSError, KeyError, ValueError):
        pass
    logger.warning("ignoring stale or unreadable reference cache %s", path)
    return None


def solve_reference(
    dataset: SparseDataset,
    lam: float,
    tol: float = 1e-12,
    *,
    max_epochs: int = 20000,
    cache: bool = True,
    cache_dir: str | os.PathLike | None = None,
    seed: int = 0,
    method: str = "auto",
) -> np.ndarray:
    """High-accuracy minimizer used to measure suboptimality.

    Iterates until ``||grad f(x)||_inf <= tol``. With ``method="auto"``,
    problems with up to ``NEWTON_MAX_DIM`` features use damped Newton with
    a dense Hessian (``"newton"``) and larger ones use serial SAGA
    (``"saga"``) with step ``1/(5L)``: the iterates of dense SAGA, computed
    with lagged (just-in-time) coordinate updates so each step costs
    O(support), with the memory average recomputed exactly once per epoch
    to keep rounding drift out of the stopping test.

    Results are cached under ``cache_dir`` keyed by dataset hash, ``lam``
    and ``tol``; see the README for the file layout.

    Raises
    ------
    ConvergenceError
        If ``tol`` is not reached within ``max_epochs`` passes.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if method not in ("auto", "newton", "saga"):
        raise ValueError(f"unknown reference method {method!r}")
    lam = float(lam)
    tol = float(tol)
    path = None
    if cache:
        cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
        path = _cache_path(cache_dir, dataset, lam, tol)
        if path.exists():
            x = _read_cache(path, dataset, lam, tol)
            if x is not None:
                return x

    obj = Objective(dataset, lam)
    if method == "newton" or (method == "auto" and dataset.d <= NEWTON_MAX_DIM):
        x = _newton(obj, tol)
    else:
        x = _saga_reference(obj, tol, max_epochs, seed)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(
            tmp,
            version=np.int64(REFERENCE_CACHE_VERSION),
            dataset_hash=np.array(dataset.fingerprint()),
            lam=np.float64(lam),
            tol=np.float64(tol),
            d=np.int64(dataset.d),
            x=x,
        )
        os.replace(tmp, path)
    return x


def _newton(obj: Objective, tol: float, max_iter: int = 100) -> np.ndarray:
    """Damped Newton with an Armijo backtracking line search and a dense Cholesky solve."""
    n, d = obj.n, obj.d
    A = obj.dataset.to_csr()
    if obj.dataset.density > 0.1:
        A = A.toarray()
    x = np.zeros(d)
    f = obj.loss(x)
    for it in range(max_iter):
        g = obj.full_gradient(x)
        if not np.all(np.isfinite(g)):
            raise ConvergenceError("reference solver produced non-finite iterates")
        if np.max(np.abs(g)) <= tol:
            logger.debug("Newton reference converged in %d steps", it)
            return x
        p = expit(obj.dataset.labels * obj.margins(x))
        w = p * (1.0 - p) / n
        if isinstance(A, np.ndarray):
            H = (A.T * w) @ A
        else:
            H = (A.T @ A.multiply(w[:, None])).toarray()
        H[np.diag_indices(d)] += obj.lam
        step = cho_solve(cho_factor(H), g)
        t = 1.0
        while t > 1e-3:
            x_new = x - t * step
            f_new = obj.loss(x_new)
            if f_new <= f - 1e-4 * t * np.dot(g, step):
                break
            t *= 0.5
        else:
            # loss differences are at rounding level; judge the full step by its gradient
            x_new = x - step
            if np.max(np.abs(obj.full_gradient(x_new))) >= np.max(np.abs(g)):
                break
            f_new = obj.loss(x_new)
        x, f = x_new, f_new
    g = np.max(np.abs(obj.full_gradient(x)))
    raise ConvergenceError(f"Newton reference stopped after {max_iter} steps with ||grad||_inf = {g:.3g} > {tol:.3g}")


def _saga_reference(obj: Objective, tol: float, max_epochs: int, seed: int) -> np.ndarray:
    dataset = obj.dataset
    lam = obj.lam
    L = obj.constants.L
    gamma = 1.0 / (5.0 * L)
    n, d = dataset.n, dataset.d
    ip, ix, dv, y = dataset.indptr, dataset.indices, dataset.data, dataset.labels
    x = np.zeros(d)
    alpha = np.zeros(n)
    abar = np.zeros(d)
    counters = np.zeros(d, dtype=np.int64)
    rng = np.array([np.uint64(seed)], dtype=np.uint64)
    empty = np.zeros(0)
    for epoch in range(max_epochs):
        t = K.run_steps(4, ip, ix, dv, y, empty, lam, x, alpha, abar, empty, empty,
                        counters, 0, rng, n, gamma, empty)
        K.flush_lag(x, abar, lam, gamma, counters, t)
        counters[:] = 0
        abar[:] = K.scalar_memory_average(ip, ix, dv, alpha, d)
        g = obj.full_gradient(x)
        if not np.all(np.isfinite(g)):
            raise ConvergenceError("reference solver produced non-finite iterates")
        gnorm = np.max(np.abs(g))
        if gnorm <= tol:
            logger.debug("reference solve converged after %d epochs (|g|=%.3g)", epoch + 1, gnorm)
            break
    else:
        raise ConvergenceError(
            f"reference solver reached {max_epochs} epochs with ||grad||_inf = {gnorm:.3g} > {tol:.3g}"
        )
    return x
