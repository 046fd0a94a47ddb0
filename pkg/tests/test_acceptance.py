"""Acceptance suite: one test per criterion, thresholds fixed in logcap.selftest.

Run ``pytest tests/test_acceptance.py -v`` for one PASS/FAIL line per
criterion; ``logcap selftest`` prints the measured values next to them.
"""

from logcap import selftest


def _check(k):
    res = selftest.CRITERIA[k]()
    print(res.line())
    assert res.passed, f"{res.line()}\nthresholds: {res.thresholds}"


def test_01_closed_form_vs_quadrature():
    _check(1)


def test_02_self_energy_constant_oracle():
    _check(2)


def test_03_interval_capacity():
    _check(3)


def test_04_scaling_law():
    _check(4)


def test_05_two_interval_oracle():
    _check(5)


def test_06_farfield_certificate():
    _check(6)


def test_07_self_sum_identity():
    _check(7)


def test_08_multilevel_convergence():
    _check(8)


def test_09_assumption_audit():
    _check(9)


def test_10_montecarlo_gap_tail():
    _check(10)


def test_11_montecarlo_centered_kernel():
    _check(11)


def test_12_redistribution_step():
    _check(12)


def test_13_telescoping_ledger():
    _check(13)


def test_14_phase_sweep():
    _check(14)

