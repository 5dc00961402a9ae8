"""Convergence traces and their CSV form."""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Trace", "write_trace_csv", "read_trace_csv", "format_float"]

CSV_HEADER = ("iteration", "wall_seconds", "suboptimality")
NEGATIVE_SLACK = 1e-12


def format_float(value: float) -> str:
    return format(float(value), ".17g")


@dataclass
class Trace:
    """Suboptimality records of one run plus the configuration that produced it.

    ``status`` is ``"completed"``, ``"target"`` (stopped early at the target
    suboptimality) or ``"diverged"``.
    """

    iterations: np.ndarray
    wall_seconds: np.ndarray
    suboptimality: np.ndarray
    method: str
    workers: int
    gamma: float
    seed: int
    lam: float
    tau_hat: float | None = None
    status: str = "completed"
    clamped: int = 0
    meta: dict = field(default_factory=dict)
    x: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.iterations = np.asarray(self.iterations, dtype=np.int64)
        self.wall_seconds = np.asarray(self.wall_seconds, dtype=np.float64)
        sub = np.array(self.suboptimality, dtype=np.float64)
        tiny_neg = (sub < 0) & (sub >= -NEGATIVE_SLACK)
        if np.any(sub < -NEGATIVE_SLACK):
            raise ValueError(f"suboptimality below -{NEGATIVE_SLACK}: {sub.min():.3g}")
        self.clamped += int(tiny_neg.sum())
        sub[tiny_neg] = 0.0
        self.suboptimality = sub
        if np.any(np.diff(self.iterations) <= 0):
            raise ValueError("trace iterations must be strictly increasing")

    def __len__(self):
        return self.iterations.shape[0]

    @property
    def final(self) -> float:
        return float(self.suboptimality[-1])

    def first_reaching(self, target: float):
        """(iteration, seconds) of the first record at or below ``target``, else None."""
        hit = np.flatnonzero(self.suboptimality <= target)
        if hit.size == 0:
            return None
        k = hit[0]
        return int(self.iterations[k]), float(self.wall_seconds[k])

    def provenance(self) -> dict:
        return {
            "method": self.method,
            "workers": self.workers,
            "gamma": self.gamma,
            "seed": self.seed,
            "lambda": self.lam,
            "tau_hat": self.tau_hat,
            "status": self.status,
            "clamped": self.clamped,
            **self.meta,
        }


def trace_csv_text(trace: Trace, timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for it, sec, sub in zip(trace.iterations, trace.wall_seconds, trace.suboptimality):
        writer.writerow([int(it), format_float(sec if timing else 0.0), format_float(sub)])
    return buf.getvalue()


def write_trace_csv(trace: Trace, path: str | os.PathLike, timing: bool = True) -> None:
    """Write the records as CSV and the provenance to ``<path>.json``.

    With ``timing=False`` the wall-clock column is written as zeros so that
    serial runs produce byte-identical files.
    """
    path = Path(path)
    path.write_text(trace_csv_text(trace, timing=timing))
    Path(str(path) + ".json").write_text(json.dumps(trace.provenance(), indent=2, sort_keys=True) + "\n")


def read_trace_csv(path: str | os.PathLike) -> Trace:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    body = np.array(rows[1:], dtype=np.float64).reshape(-1, 3)
    meta_path = Path(str(path) + ".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    known = {k: meta.pop(k, None) for k in ("method", "workers", "gamma", "seed", "lambda", "tau_hat", "status", "clamped")}
    return Trace(
        iterations=body[:, 0].astype(np.int64),
        wall_seconds=body[:, 1],
        suboptimality=body[:, 2],
        method=known["method"] or "unknown",
        workers=int(known["workers"] or 1),
        gamma=float(known["gamma"] or 0.0),
        seed=int(known["seed"] or 0),
        lam=float(known["lambda"] or 0.0),
        tau_hat=known["tau_hat"],
        status=known["status"] or "completed",
        meta=meta,
    )
