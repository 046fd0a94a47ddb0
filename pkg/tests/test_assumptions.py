import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from logcap.assumptions import (
    CenteredKernel,
    InsufficientDataError,
    TailStats,
    audit,
    check_distribution,
    check_gap_control,
    check_log_spacing,
    gap_ratio_max,
    gap_tail_bound,
    montecarlo_fourth_moment,
    montecarlo_gap_tail,
    truncated_log_kernel,
    uniform_conditional_mean,
    uniform_mean,
)
from logcap.kernel import SingularPairError
from logcap.setgen import CenterSequence, DensityTable, LengthSchedule

# mpmath, 25 digits
C_UNIFORM_01 = 0.6324911676688686799634184  # 2 * int_0^0.1 (1 - t)(-log t) dt
G1_005 = 0.5300451229771041180735603  # g1(0.05), delta = 0.1
G1_05 = 0.6605170185988091368035983  # g1(0.5), delta = 0.1


def test_uniform_centering_constants():
    assert uniform_mean(0.1) == pytest.approx(C_UNIFORM_01, rel=1e-14)
    assert uniform_conditional_mean(0.05, 0.1) == pytest.approx(G1_005, rel=1e-14)
    assert uniform_conditional_mean(0.5, 0.1) == pytest.approx(G1_05, rel=1e-14)
    assert uniform_mean(0.0) == 0.0


def test_uniform_mean_is_average_of_conditional():
    val, _ = integrate.quad(lambda x: float(uniform_conditional_mean(x, 0.1)), 0, 1, points=[0.1, 0.9])
    assert val == pytest.approx(uniform_mean(0.1), rel=1e-10)


def test_uniform_mean_monotone_in_delta():
    ds = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 0.5, 1.0]
    vals = [uniform_mean(d) for d in ds]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    assert uniform_mean(1.0) == pytest.approx(1.5)


def test_truncated_kernel():
    assert truncated_log_kernel(0.1, 0.2, 0.05) == 0.0
    assert truncated_log_kernel(0.1, 0.12, 0.05) == pytest.approx(-math.log(0.02))
    assert truncated_log_kernel(0.3, 0.3, 0.05) == math.inf


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_centered_kernel_double_centering():
    t = DensityTable.from_function(lambda x: 0.5 + x)
    H = CenteredKernel(t, 0.1)
    assert H.interp_error < 5e-5  # linear interpolation across the kinks at delta
    for x in (0.03, 0.4, 0.97):
        pts = [p for p in (x - 0.1, x, x + 0.1) if 0 < p < 1]
        val, _ = integrate.quad(lambda y: float(H(x, y)) * float(t(y)), 0, 1, points=pts, limit=200)
        assert abs(val) < 5e-5


def test_centered_kernel_quadrature_path_matches_uniform():
    t = DensityTable([0.0, 0.5, 1.0], [1.0, 1.0 + 1e-12, 1.0])
    assert not t.is_uniform
    H = CenteredKernel(t, 0.1)
    assert H.c == pytest.approx(C_UNIFORM_01, rel=1e-6)
    assert H.g1(0.5) == pytest.approx(G1_05, rel=1e-6)


def test_a1_iid_passes_clustered_fails():
    seq = CenterSequence.iid(DensityTable.uniform(), 2024)
    rep = check_distribution(seq, 1024)
    assert rep["passed"]
    assert rep["threshold"] == pytest.approx(5 / 32)
    clustered = 0.5 + np.exp(-np.arange(1, 2048, dtype=float)) * 0.4
    assert not check_distribution(clustered, 1024)["passed"]


def test_a1_insufficient_data():
    with pytest.raises(InsufficientDataError):
        check_distribution(np.full(10, 0.5), 16)


def test_a2_grid_passes_and_duplicates():
    seq = CenterSequence.iid(DensityTable.uniform(), 11)
    rep = check_log_spacing(seq, 64, q=2)
    assert rep["passed"]
    assert rep["levels"] == [64, 128, 256]
    c = CenterSequence.iid(DensityTable.uniform(), 11).prefix(600).copy()
    c[100] = c[200]
    with pytest.raises(SingularPairError):
        check_log_spacing(c, 64, q=2)
    rep = check_log_spacing(c, 64, q=2, on_singular="inf")
    assert not rep["passed"]
    assert rep["singular_pair"] == (101, 201)


def test_a2_matches_bruteforce():
    c = CenterSequence.iid(DensityTable.uniform(), 3).prefix(200)
    rep = check_log_spacing(c, 16, q=2, deltas=(0.05,))
    idx = np.arange(16, 128)  # A_{16,2}
    lab = np.floor(np.log2(idx // 16)).astype(int)
    sums = np.zeros((3, 3))
    for a in range(idx.size):
        for b in range(idx.size):
            if a != b:
                d = abs(c[idx[a] - 1] - c[idx[b] - 1])
                if d < 0.05:
                    sums[lab[a], lab[b]] -= math.log(d)
    lv = np.array([16, 32, 64])
    np.testing.assert_allclose(rep["averages"][0.05], sums / np.outer(lv, lv), rtol=1e-12)


def _brute_ratio(c, ll):
    best = -math.inf
    for i in range(c.size):
        for j in range(c.size):
            if i != j:
                best = max(best, math.log((math.exp(ll[i]) + math.exp(ll[j])) / (2 * abs(c[i] - c[j]))))
    return best


@given(st.lists(st.floats(0.001, 0.999), min_size=2, max_size=30, unique=True),
       st.floats(0.1, 5.0), st.randoms(use_true_random=False))
def test_gap_ratio_matches_bruteforce_and_symmetric(cs, lam, rnd):
    c = np.array(cs)
    ll = -lam * np.arange(1, c.size + 1, dtype=float)
    r, _ = gap_ratio_max(c, ll)
    assert r == pytest.approx(_brute_ratio(c, ll), abs=1e-12)
    perm = list(range(c.size))
    rnd.shuffle(perm)
    r2, _ = gap_ratio_max(c[perm], ll[perm])
    assert r2 == pytest.approx(r, abs=1e-12)


@given(st.lists(st.floats(0.001, 0.999), min_size=2, max_size=30, unique=True),
       st.floats(1e-3, 1.0), st.floats(0.0, 1.0))
def test_gap_ratio_scale_covariance(cs, beta, about):
    c = np.array(cs)
    ll = -0.7 * np.arange(1, c.size + 1, dtype=float)
    r, _ = gap_ratio_max(c, ll)
    c2 = about + beta * (c - about)
    if np.unique(c2).size < c2.size:
        return
    r2, _ = gap_ratio_max(c2, ll + math.log(beta))
    assert r2 == pytest.approx(r, abs=1e-8)


def test_a3_examples():
    sched = LengthSchedule(1.0, 1.0)
    seq = CenterSequence.iid(DensityTable.uniform(), 20240601)
    rep = check_gap_control(sched, seq, 64, q=2)
    assert rep["passed"] and rep["indices"] == (64, 511)
    clustered = 0.5 + np.exp(-np.arange(1, 32, dtype=float))
    rep = check_gap_control(sched, clustered, 8, q=1)
    # every consecutive pair has this ratio; 0.5 + e^-30 carries ~1e-3 relative rounding in the gap
    assert rep["max_ratio"] == pytest.approx((1 + math.exp(-1)) / (2 * (1 - math.exp(-1))), rel=1e-3)
    assert not rep["passed"]


def test_audit_clustered_reports_instead_of_raising():
    c = np.full(300, 0.5)
    rep = audit(LengthSchedule(1.0, 1.0), c, 64, q=1)
    assert rep.verdicts == {"A1": False, "A2": False, "A3": False}
    assert not rep.passed


def test_gap_tail_montecarlo_below_bound():
    st_ = montecarlo_gap_tail(LengthSchedule(1.0, 1.0), DensityTable.uniform(), 8, 0.5, 2000, seed=1, q=1)
    assert st_.bound_value == pytest.approx(gap_tail_bound(8, 1.0, 0.5, 1.0))
    assert st_.frequency <= st_.bound_value
    # a vacuous bound is flagged
    weak = montecarlo_gap_tail(LengthSchedule(0.01, 1.0), DensityTable.uniform(), 4, 0.5, 50, seed=1, q=1)
    assert weak.vacuous


def test_tailstats_validation():
    with pytest.raises(ValueError):
        TailStats(10, 11, 0.1)


def test_fourth_moment_conditional_means():
    t = DensityTable.uniform()
    res = montecarlo_fourth_moment(t, 0.01, 32, 1, trials=40, seed=3, probe_samples=5000)
    assert all(ch["within_3se"] for ch in res.extra["conditional_means"])
    assert set(res.fourth_moment_sums) == {(32, 32), (32, 64), (64, 32), (64, 64)}
    s = res.fourth_moment_sums[(32, 64)]
    np.testing.assert_allclose(s, res.fourth_moment_sums[(64, 32)], rtol=1e-12)
