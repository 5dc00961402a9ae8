"""Closed-form rate and step-size evaluators.

``a`` is a step-size multiplier: the step is ``gamma = a / L``. ``delta``
is the normalized sparsity Δ = Δ_r / n from :func:`asaga.data.sparsity_profile`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "RateEstimate",
    "SpeedupCondition",
    "serial_rate",
    "xi",
    "asaga_stepsize",
    "speedup_condition",
    "rate_estimate",
]


@dataclass(frozen=True)
class RateEstimate:
    rho: float
    a_star: float
    xi: float
    regime: str

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError(f"rate factor must be in (0, 1), got {self.rho}")
        if not 0 < self.a_star <= 1 / 32:
            raise ValueError(f"a* must be in (0, 1/32], got {self.a_star}")
        if not self.xi >= 1:
            raise ValueError(f"xi must be >= 1, got {self.xi}")


@dataclass(frozen=True)
class SpeedupCondition:
    """Whether ``tau`` is below both raw overlap bounds (unit constants)."""

    holds: bool
    bound: float
    size_bound: float
    sparsity_bound: float


def serial_rate(n: int, kappa: float, a: float) -> float:
    """Geometric rate factor ``(1/5) min(1/n, a/kappa)`` of serial Sparse SAGA with ``gamma = a/(5L)``."""
    if a > 1:
        raise ValueError(f"step multiplier a must be <= 1, got {a}")
    if a < 0:
        raise ValueError(f"step multiplier a must be >= 0, got {a}")
    if n < 1 or kappa < 1:
        raise ValueError("need n >= 1 and kappa >= 1")
    return min(1.0 / n, a / kappa) / 5.0


def _check(tau, delta, kappa, n):
    if tau < 0:
        raise ValueError(f"overlap must be >= 0, got {tau}")
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    lo = 1.0 / n if n is not None else 0.0
    if not (lo <= delta <= 1.0 and delta > 0):
        raise ValueError(f"invalid sparsity: delta={delta} outside [{lo:g}, 1]")


def xi(tau: float, delta: float, kappa: float) -> float:
    """``sqrt(1 + min(1/sqrt(delta), tau) / (8 kappa))``."""
    return math.sqrt(1.0 + min(1.0 / math.sqrt(delta), tau) / (8.0 * kappa))


def asaga_stepsize(tau: float, delta: float, kappa: float, n: int | None = None) -> float:
    """Largest step multiplier ``a*(tau)`` for which ASAGA is guaranteed to converge.

    ``a* = 1 / (32 (1 + tau sqrt(delta)) xi)``. The guarantee also needs
    ``tau < n/10``; that is left to the caller. Passing ``n`` enables the
    ``delta >= 1/n`` check.
    """
    _check(tau, delta, kappa, n)
    return 1.0 / (32.0 * (1.0 + tau * math.sqrt(delta)) * xi(tau, delta, kappa))


def speedup_condition(tau: float, n: int, kappa: float, delta: float) -> SpeedupCondition:
    """Compare ``tau`` with ``n/10`` and ``(1/sqrt(delta)) max(1, n/kappa)``.

    Both bounds are only known up to constants; they are reported raw and
    ``bound`` is the smaller of the two.
    """
    _check(tau, delta, kappa, n)
    size = n / 10.0
    sparse = max(1.0, n / kappa) / math.sqrt(delta)
    bound = min(size, sparse)
    return SpeedupCondition(holds=tau <= bound, bound=bound, size_bound=size, sparsity_bound=sparse)


def rate_estimate(tau: float, n: int, kappa: float, delta: float) -> RateEstimate:
    """a*(tau), xi and the resulting rate ``(1/5) min(1/n, a*/kappa)``."""
    a = asaga_stepsize(tau, delta, kappa, n)
    return RateEstimate(
        rho=serial_rate(n, kappa, a),
        a_star=a,
        xi=xi(tau, delta, kappa),
        regime="well-conditioned" if n >= kappa else "ill-conditioned",
    )
