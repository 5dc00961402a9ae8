import pytest

from asaga.verify import INJECTIONS, check_lost_updates, check_unbiasedness, run_checks


def test_suite_passes_quickly():
    results = run_checks()
    assert all(r.passed for r in results), [r for r in results if not r.passed]
    assert sum(r.seconds for r in results) < 60


def test_bad_ddiag_is_caught():
    ok, detail = check_unbiasedness(instances=5, scale=2.0)
    assert not ok and "gap" in detail


def test_non_atomic_injection_is_caught():
    # the race window is narrow on one core, so give it a few attempts
    assert any(not check_lost_updates(atomic=False)[0] for _ in range(3))


@pytest.mark.parametrize("inject,name", [("bad-ddiag", "sparse update unbiasedness"),
                                         ("non-atomic", "lost-update freedom")])
def test_injections_fail_only_their_check(inject, name):
    failed = {r.name for r in run_checks(inject) if not r.passed}
    assert name in failed
    assert failed <= {name}


def test_unknown_injection():
    assert INJECTIONS == ("non-atomic", "bad-ddiag")
    with pytest.raises(ValueError):
        run_checks("typo")
