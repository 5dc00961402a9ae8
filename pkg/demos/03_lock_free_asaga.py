"""Several threads running ASAGA over one shared iterate, with no locks.

Each coordinate write is an atomic add. The second half shows what goes
wrong with plain read-modify-write: increments get lost. How often that
happens depends on how many cores the machine has.

Run: python demos/03_lock_free_asaga.py
"""
from asaga.asynchronous import SharedState, run_async, stress_atomic_adds
from asaga.bench import auto_gamma
from asaga.data import make_synthetic
from asaga.objective import Objective
from asaga.serial import SolverConfig, run_serial

ob = Objective(make_synthetic(2000, 500, density=0.01, seed=1), lam=0.01)
gamma = auto_gamma(ob, workers=4)
cfg = SolverConfig(gamma=gamma, epochs=30, seed=0)

serial = run_serial("sparse-saga", ob, cfg)
for workers in (1, 2, 4):
    tr = run_async("asaga", ob, cfg, workers)
    print(f"asaga x{workers}: final {tr.final:.2e} (serial {serial.final:.2e}), "
          f"tau_hat {tr.tau_hat:.0f}, {tr.wall_seconds[-1]:.3f}s")

hog = run_async("hogwild", ob, cfg, 4)
print(f"hogwild x4: final {hog.final:.2e}  <- constant-step SGD keeps its variance")

shared = SharedState.zeros(ob.n, ob.d)
k = 1_000_000
print(f"\n4 threads x {k} unit adds to one coordinate:")
print("  atomic:", stress_atomic_adds(shared.x, 0, 4, k))
print("  plain: ", stress_atomic_adds(shared.alpha_bar, 0, 4, k, atomic=False))
