"""Lock-free asynchronous SAGA for sparse L2-regularized logistic regression.

Serial reference solvers, a shared-memory engine with atomic coordinate
writes, closed-form step-size and rate evaluators, and a small
benchmarking layer.
"""
from .asynchronous import (
    SharedState,
    estimate_overlap,
    kromagnon_run,
    run_async,
    simulate_lockstep,
)
from .data import (
    DatasetError,
    SparseDataset,
    load_libsvm,
    make_synthetic,
    parse_libsvm,
    problem_constants,
    sparsity_profile,
    standardize,
)
from .objective import ConvergenceError, Objective, solve_reference
from .serial import SolverConfig, run_serial
from .theory import asaga_stepsize, rate_estimate, serial_rate, speedup_condition
from .trace import Trace, read_trace_csv, write_trace_csv

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DatasetError",
    "Objective",
    "SharedState",
    "SolverConfig",
    "SparseDataset",
    "Trace",
    "asaga_stepsize",
    "estimate_overlap",
    "kromagnon_run",
    "load_libsvm",
    "make_synthetic",
    "parse_libsvm",
    "problem_constants",
    "rate_estimate",
    "read_trace_csv",
    "run_async",
    "run_serial",
    "serial_rate",
    "simulate_lockstep",
    "solve_reference",
    "sparsity_profile",
    "speedup_condition",
    "standardize",
    "write_trace_csv",
]
