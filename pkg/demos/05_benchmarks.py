"""Step-size search and speedup tables, the same code the CLI runs.

The speedup table has two columns of interest. Wall-clock speedup needs
real cores. The iteration speedup counts how many iterations each run
needed and asks whether p workers would be p times faster if each
iteration cost the same; it holds up even on one core.

Run: python demos/05_benchmarks.py
"""
import logging

from asaga.bench import auto_gamma, gridsearch, measure_speedup
from asaga.data import make_synthetic
from asaga.objective import Objective
from asaga.serial import SolverConfig

logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")

ob = Objective(make_synthetic(2000, 500, density=0.01, seed=1), lam=0.01)
L = ob.constants.L

# with n far above kappa the rate is capped by how fast the memory refreshes, so
# steps well below 1/L already converge at full speed and larger ones only add noise
res = gridsearch("sparse-saga", ob, SolverConfig(gamma=1.0, epochs=10), lo=0.001 / L, hi=0.03 / L, num=8)
for g, f in zip(res.grid, res.finals):
    print(f"gamma*L={g * L:.3f} final={f:.2e}{'  <- best' if g == res.best_gamma else ''}")

cfg = SolverConfig(gamma=auto_gamma(ob, 4), epochs=80, record_every=500)
report, _ = measure_speedup("asaga", ob, cfg, [1, 2, 4], repeats=3)
print()
print(report.summary())
print(report.csv_text())
