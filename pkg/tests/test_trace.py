import json

import numpy as np
import pytest

from asaga.trace import Trace, read_trace_csv, trace_csv_text, write_trace_csv


def _trace(**kw):
    base = dict(iterations=[0, 10, 20], wall_seconds=[0.0, 0.5, 1.0], suboptimality=[1.0, 0.1, 1e-3],
                method="saga", workers=1, gamma=0.25, seed=3, lam=0.01)
    base.update(kw)
    return Trace(**base)


def test_csv_layout():
    text = trace_csv_text(_trace())
    lines = text.split("\n")
    assert lines[0] == "iteration,wall_seconds,suboptimality"
    assert lines[2] == "10,0.5,0.10000000000000001"
    assert text.endswith("\n") and "\r" not in text


def test_roundtrip_keeps_values_and_provenance(tmp_path):
    tr = _trace(tau_hat=2.0, meta={"epochs": 4})
    path = tmp_path / "run.csv"
    write_trace_csv(tr, path)
    back = read_trace_csv(path)
    assert np.array_equal(back.suboptimality, tr.suboptimality)
    assert np.array_equal(back.iterations, tr.iterations)
    assert (back.method, back.gamma, back.seed, back.lam, back.tau_hat) == ("saga", 0.25, 3, 0.01, 2.0)
    assert back.meta == {"epochs": 4}
    prov = json.loads((tmp_path / "run.csv.json").read_text())
    assert prov["workers"] == 1 and prov["lambda"] == 0.01


def test_timing_off_zeroes_clock():
    assert ",0," in trace_csv_text(_trace(), timing=False).split("\n")[2]


def test_tiny_negatives_are_clamped_and_counted():
    tr = _trace(suboptimality=[1.0, -1e-13, -5e-13])
    assert tr.clamped == 2 and tr.suboptimality.min() == 0.0
    with pytest.raises(ValueError):
        _trace(suboptimality=[1.0, -1e-6, 0.0])


def test_iterations_must_increase():
    with pytest.raises(ValueError):
        _trace(iterations=[0, 10, 10])


def test_first_reaching():
    tr = _trace()
    assert tr.first_reaching(0.1) == (10, 0.5)
    assert tr.first_reaching(1e-9) is None
    assert tr.final == 1e-3 and len(tr) == 3


def test_foreign_header_is_rejected(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_trace_csv(p)
