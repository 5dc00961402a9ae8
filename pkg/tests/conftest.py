import os
import sys

import numpy as np
import pytest

from asaga.data import SparseDataset, make_synthetic


@pytest.fixture(scope="session", autouse=True)
def _reference_cache(tmp_path_factory):
    old = os.environ.get("ASAGA_CACHE_DIR")
    os.environ["ASAGA_CACHE_DIR"] = str(tmp_path_factory.mktemp("xstar"))
    yield
    if old is None:
        os.environ.pop("ASAGA_CACHE_DIR", None)
    else:
        os.environ["ASAGA_CACHE_DIR"] = old


@pytest.fixture
def tiny():
    # n=2, d=2 with supports {0} and {0, 1}
    return SparseDataset(np.array([0, 1, 3]), np.array([0, 0, 1]), np.array([1.0, 0.5, 2.0]),
                         np.array([1.0, -1.0]), 2)


@pytest.fixture(scope="session")
def sparse_small():
    return make_synthetic(200, 50, density=0.1, seed=3)


@pytest.fixture(scope="session")
def dense_small():
    return make_synthetic(60, 8, dense=True, seed=5)



def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
