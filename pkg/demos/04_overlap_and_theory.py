"""Measuring overlap and turning it into a step size.

tau_hat is the largest 100-iteration average of how many other updates
landed while one iteration was in flight. On an equal-speed interleaving
it is exactly p - 1. Real threads on a machine with few cores see much
larger values, because a thread that loses the CPU mid-iteration misses
a whole time slice of updates.

Run: python demos/04_overlap_and_theory.py
"""
from asaga.asynchronous import estimate_overlap, run_async, simulate_lockstep
from asaga.data import make_synthetic
from asaga.objective import Objective
from asaga.serial import SolverConfig
from asaga.theory import asaga_stepsize, rate_estimate, speedup_condition

ob = Objective(make_synthetic(2000, 500, density=0.01, seed=1), lam=0.01)
n, kappa, delta = ob.n, ob.constants.kappa, ob.profile.delta

print("workers  lockstep  threads")
for p in (1, 2, 4, 8):
    _, samples = simulate_lockstep(ob, 1e-3, p, 4000)
    tr = run_async("asaga", ob, SolverConfig(gamma=1e-3, epochs=50), p, counter_stride=1)
    print(f"{p:>7}  {estimate_overlap(samples):>8.0f}  {tr.tau_hat:>7.0f}")

print(f"\nn={n} kappa={kappa:.1f} Delta={delta:.3f}")
for tau in (0, 3, 10, 100):
    est = rate_estimate(tau, n, kappa, delta)
    cond = speedup_condition(tau, n, kappa, delta)
    print(f"tau={tau:>3}: a*={asaga_stepsize(tau, delta, kappa):.5f} rho={est.rho:.2e} "
          f"linear speedup bound {cond.bound:.0f} -> {'inside' if cond.holds else 'outside'}")
