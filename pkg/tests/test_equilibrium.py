import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logcap.equilibrium import (
    discretize,
    equilibrium_density_profile,
    refine_estimate,
    solve_equilibrium,
)
from logcap.kernel import Interval


def _cap(intervals, budget=400):
    return solve_equilibrium(discretize(intervals, budget))


def test_unit_interval_energy_log4():
    est = _cap([(0.0, 1.0)], 2000)
    assert est.energy == pytest.approx(math.log(4), abs=1e-6)
    assert est.capacity == pytest.approx(0.25, rel=1e-6)
    assert not est.projected


def test_half_interval_capacity():
    assert _cap([(0.0, 0.5)], 1000).capacity == pytest.approx(0.125, rel=1e-5)


def test_symmetric_two_intervals():
    # [-1,-a] u [a,1] has capacity sqrt(1 - a^2)/2; mapped onto [0,1] with a = 1/2
    est = _cap([(0.0, 0.25), (0.75, 1.0)], 2000)
    assert est.capacity == pytest.approx(math.sqrt(0.75) / 4, rel=1e-5)
    w = est.weights
    half = est.discretization.mid < 0.5
    assert w[half].sum() == pytest.approx(0.5, abs=1e-9)


def test_tiny_interval_log_domain():
    iv = Interval(0.5, -30.0)
    est = _cap([iv], 500)
    assert est.energy == pytest.approx(30.0 + math.log(4), abs=1e-5)


def test_refine_extrapolates():
    est = refine_estimate([(0.0, 1.0)], [100, 200, 400])
    assert abs(est.energy - math.log(4)) < 1e-7
    assert est.error_estimate < 1e-4
    assert est.diagnostics["monotone"]


def test_profile_is_arcsine():
    est = _cap([(0.0, 1.0)], 2000)
    prof = equilibrium_density_profile(est)
    for x in (0.1, 0.3, 0.5, 0.8):
        assert prof(x) == pytest.approx(1 / (math.pi * math.sqrt(x * (1 - x))), rel=1e-3)


def test_validation():
    with pytest.raises(ValueError):
        discretize([(0.0, 0.5), (0.4, 0.6)], 100)
    with pytest.raises(ValueError):
        discretize([(0.0, 0.1), (0.2, 0.3)], 1)
    with pytest.raises(ValueError):
        discretize([], 10)


@st.composite
def interval_sets(draw):
    k = draw(st.integers(1, 4))
    cuts = sorted(draw(st.lists(st.floats(0.0, 1.0), min_size=2 * k, max_size=2 * k, unique=True)))
    ivs = [(cuts[2 * i], cuts[2 * i + 1]) for i in range(k) if cuts[2 * i + 1] - cuts[2 * i] > 1e-4]
    if not ivs:
        ivs = [(0.2, 0.4)]
    return ivs


@settings(max_examples=25)
@given(interval_sets(), st.floats(0.05, 1.0))
def test_scaling_covariance(ivs, beta):
    base = _cap(ivs, 200)
    scaled = _cap([(beta * a, beta * b) for a, b in ivs], 200)
    assert scaled.energy == pytest.approx(base.energy - math.log(beta), abs=1e-9)


@settings(max_examples=25)
@given(interval_sets())
def test_monotone_under_inclusion(ivs):
    lo, hi = ivs[0][0], ivs[-1][1]
    hull = _cap([(lo, hi)], 300).capacity
    part = _cap(ivs, 300).capacity
    assert part <= hull * (1 + 1e-4)
