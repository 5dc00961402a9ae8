"""Serial baselines on one problem, and what the trace files look like.

SGD with a constant step stalls at a noise floor. The SAGA variants and
SVRG keep shrinking the error at a linear rate, and the sparse and lagged
forms only touch the support of the sampled row.

Run: python demos/02_serial_solvers.py
"""
import tempfile
from pathlib import Path

from asaga.bench import fitted_contraction
from asaga.data import make_synthetic
from asaga.objective import Objective
from asaga.serial import SolverConfig, run_serial
from asaga.theory import serial_rate
from asaga.trace import write_trace_csv

ob = Objective(make_synthetic(500, 100, density=0.05, seed=0), lam=0.01)
L = ob.constants.L
cfg = SolverConfig(gamma=1 / (5 * L), epochs=30, seed=0)

print(f"{'method':<12} {'final subopt':>13} {'contraction/iter':>17}")
for method in ("sgd", "saga", "sparse-saga", "lagged-saga", "svrg"):
    tr = run_serial(method, ob, cfg)
    print(f"{method:<12} {tr.final:>13.2e} {fitted_contraction(tr):>17.2e}")

rho = serial_rate(ob.n, ob.constants.kappa, 1.0)
print(f"guaranteed contraction for gamma=1/(5L): {rho:.2e} per iteration")

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp) / "sparse-saga.csv"
    write_trace_csv(run_serial("sparse-saga", ob, cfg), out, timing=False)
    print("\n" + "".join(out.read_text().splitlines(keepends=True)[:4]), end="")
    print("provenance:", (Path(str(out) + ".json")).read_text().replace("\n", " ")[:120], "...")
