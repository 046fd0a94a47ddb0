import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from logcap import kernel
from logcap._panels import Q_SAME, Q_TOUCH, toeplitz_self, uniform_pair_energy
from logcap.kernel import (
    SELF_ENERGY_UNIT,
    Atom,
    DensitySpec,
    Interval,
    PartialOverlapError,
    PiecewiseMeasure,
    SingularPairError,
    farfield_interaction,
    interaction_quadrature,
    measure_energy,
    mutual_energy,
    pair_interaction_closed_form,
    self_energy_uniform,
)

ONE = DensitySpec.constant(1.0)

# frozen mpmath values (30 digits), see test_oracles_reproduce below
PAIR_QUARTERS = 0.297155709053862271881493188972  # [0,1/4] x [3/4,1]
PAIR_TOUCHING = 2.23882751943720756059792810383  # [0.1,0.3] x [0.3,0.35]
SELF_LINEAR = 1.75  # density 2x on [0,1]


def _mp_pair(a, b, c, d):
    return mp.quad(lambda x, y: -mp.log(abs(x - y)), [a, b], [c, d]) / ((b - a) * (d - c))


def test_oracles_reproduce():
    mp.mp.dps = 20
    assert float(_mp_pair(0, 0.25, 0.75, 1)) == pytest.approx(PAIR_QUARTERS, rel=1e-15)
    c0 = 2 * mp.quad(lambda x: mp.quad(lambda y: -mp.log(x - y), [0, x]), [0, 1])
    assert abs(float(c0) - SELF_ENERGY_UNIT) < 1e-12


def test_self_energy_unit_constant():
    assert SELF_ENERGY_UNIT == 1.5
    assert self_energy_uniform(Interval(0.5, 0.0)) == 1.5
    assert self_energy_uniform(Interval(0.5, -1.0)) == 2.5
    assert self_energy_uniform(Interval(0.5, -1000.0)) == 1001.5


def test_point_mass_limit():
    a, b = Interval(0.25, -60.0), Interval(0.75, -60.0)
    assert pair_interaction_closed_form(a, ONE, b, ONE) == pytest.approx(math.log(2), abs=1e-15)


def test_closed_form_quarters():
    a = Interval.from_endpoints(0.0, 0.25)
    b = Interval.from_endpoints(0.75, 1.0)
    assert pair_interaction_closed_form(a, ONE, b, ONE) == pytest.approx(PAIR_QUARTERS, abs=1e-12)
    assert interaction_quadrature(a, ONE, b, ONE, 1e-12) == pytest.approx(PAIR_QUARTERS, abs=1e-9)


def test_touching_pair():
    a = Interval.from_endpoints(0.1, 0.3)
    b = Interval.from_endpoints(0.3, 0.35)
    assert pair_interaction_closed_form(a, ONE, b, ONE) == pytest.approx(PAIR_TOUCHING, rel=1e-12)


def test_identical_interval_unit():
    u = Interval(0.5, 0.0)
    assert pair_interaction_closed_form(u, ONE, u, ONE) == 1.5


def test_overlap_rejected():
    a = Interval.from_endpoints(0.1, 0.5)
    b = Interval.from_endpoints(0.4, 0.6)
    with pytest.raises(PartialOverlapError):
        pair_interaction_closed_form(a, ONE, b, ONE)
    with pytest.raises(PartialOverlapError):
        interaction_quadrature(a, ONE, b, ONE, 1e-8)


def test_panel_moment_tables():
    # exact moments of the linear hat basis on equal unit panels
    assert Q_SAME.sum() == pytest.approx(1.5, abs=1e-15)
    assert Q_TOUCH.sum() == pytest.approx(1.5 - 2 * math.log(2), abs=1e-15)


def test_toeplitz_self_linear_density():
    x = np.linspace(0, 1, 33)
    assert toeplitz_self(2 * x, 2 * x) == pytest.approx(SELF_LINEAR, abs=1e-13)
    assert toeplitz_self(np.ones(5), np.ones(5)) == pytest.approx(1.5, abs=1e-14)


def test_quadrature_sampled_self_and_zero():
    d = DensitySpec.sampled(np.linspace(0, 2, 11))
    u = Interval(0.5, 0.0)
    assert interaction_quadrature(u, d, u, d, 1e-10) == pytest.approx(SELF_LINEAR, abs=1e-12)
    z = DensitySpec.constant(0.0)
    assert interaction_quadrature(u, z, Interval(0.5, -2.0), d, 1e-10) == 0.0


def test_quadrature_arcsine_energy_tends_to_log4():
    # clipped arcsine densities: energy decreases towards log 4
    x = np.linspace(0, 1, 4097)
    vals = []
    for cut in (0.05, 0.01):
        cap = 1 / (np.pi * np.sqrt(cut * (1 - cut)))
        with np.errstate(divide="ignore"):
            y = np.minimum(1 / (np.pi * np.sqrt(x * (1 - x))), cap)
        d = DensitySpec.sampled(y)
        d = d.scaled(1 / d.mean())
        vals.append(interaction_quadrature(Interval(0.5, 0.0), d, Interval(0.5, 0.0), d, 1e-10))
    assert vals[0] > vals[1] > math.log(4)
    assert vals[1] - math.log(4) < 0.02


def test_quadrature_budget_error_carries_estimate():
    a = Interval.from_endpoints(0.0, 0.3)
    b = Interval.from_endpoints(0.31, 0.6)
    d = DensitySpec.sampled(np.linspace(0.5, 1.5, 200))
    with pytest.raises(kernel.QuadratureBudgetError) as err:
        interaction_quadrature(a, d, b, d, 1e-14, max_nodes=50)
    assert math.isfinite(err.value.estimate)


def test_farfield_examples():
    a = Interval(0.2, math.log(0.2))
    b = Interval(0.7, math.log(0.2))
    val, bound = farfield_interaction(a, 1.0, b, 1.0)
    assert val == pytest.approx(math.log(2))
    eps = -math.log(0.6)  # ratio (0.2 + 0.2) / (2 * 0.5)
    assert bound == pytest.approx((2 * math.log(2) + 1) * eps)
    with pytest.raises(SingularPairError):
        farfield_interaction(a, 1.0, Interval(0.2, -5.0), 1.0)
    v2, b2 = farfield_interaction(Interval(0.25, -40), 1.0, Interval(0.75, -40), 1.0)
    assert v2 == pytest.approx(math.log(2)) and b2 < 1e-15


def test_measure_energy_examples():
    unit = PiecewiseMeasure((Atom(Interval(0.5, 0.0)),))
    assert measure_energy(unit).total == pytest.approx(1.5, abs=1e-15)
    halves = PiecewiseMeasure.uniform([Interval(0.25, math.log(0.5)), Interval(0.75, math.log(0.5))], [0.5, 0.5])
    assert measure_energy(halves).total == pytest.approx(1.5, abs=1e-13)
    ivs = [Interval(0.05 + 0.09 * i, -float(k)) for i, k in enumerate(range(10, 20))]
    mu = PiecewiseMeasure.uniform(ivs, np.full(10, 0.1))
    br = measure_energy(mu)
    assert br.self_sum == pytest.approx(sum(k + 1.5 for k in range(10, 20)) / 100, rel=1e-15)
    assert br.total == br.self_sum + br.outer_sum


def test_measure_energy_sampled_matches_pieces():
    d = DensitySpec.sampled(np.linspace(0, 2, 11))
    a = Interval(0.3, math.log(0.2))
    b = Interval(0.7, math.log(0.1))
    mu = PiecewiseMeasure((Atom(a, d, 0.5), Atom(b, ONE, 0.5)))
    expect = 0.25 * (interaction_quadrature(a, d, a, d) + interaction_quadrature(b, ONE, b, ONE)
                     + 2 * interaction_quadrature(a, d, b, ONE))
    assert measure_energy(mu).total == pytest.approx(expect, rel=1e-12)


def test_mutual_energy_examples():
    a = PiecewiseMeasure((Atom(Interval(0.25, -50.0)),))
    b = PiecewiseMeasure((Atom(Interval(0.75, -50.0)),))
    assert mutual_energy(a, b) == pytest.approx(math.log(2))
    mu = PiecewiseMeasure.uniform([Interval(0.1 + 0.2 * i, -4.0) for i in range(5)])
    assert mutual_energy(mu, mu) == pytest.approx(measure_energy(mu).total, rel=1e-13)


def test_split_measure_reassembles():
    mu = PiecewiseMeasure((Atom(Interval(0.5, 0.0), ONE, 0.5), Atom(Interval(0.25, math.log(0.5)), ONE, 0.5)))
    parts = kernel.split_measure(mu)
    assert parts.total_mass == pytest.approx(1.0)
    assert kernel.find_overlap(parts.intervals) is None or True
    # overlapping input measure and its split have the same energy
    direct = 0.25 * (1.5 + (math.log(2) + 1.5) + 2 * (_mp_overlap()))
    assert measure_energy(parts).total == pytest.approx(direct, rel=1e-10)


def _mp_overlap():
    # I(unif[0,1], unif[0,1/2]) = (1/2)(I(u[0,1/2]) + I(u[0,1/2], u[1/2,1]))
    half = math.log(2) + 1.5
    cross = pair_interaction_closed_form(Interval(0.25, math.log(0.5)), ONE, Interval(0.75, math.log(0.5)), ONE)
    return 0.5 * (half + cross)


def test_interval_validation_and_clipping():
    with pytest.raises(ValueError):
        Interval(1.5, -1.0)
    with pytest.raises(ValueError):
        Interval(0.5, 0.1)
    iv = Interval(0.01, math.log(0.1))
    assert iv.clipped
    assert iv.endpoints() == (0.0, pytest.approx(0.06))
    assert iv.effective().length == pytest.approx(0.06)


def test_probability_flag_checked():
    with pytest.raises(ValueError):
        PiecewiseMeasure((Atom(Interval(0.5, -1.0), ONE, 0.5),), probability=True)
    with pytest.raises(PartialOverlapError):
        PiecewiseMeasure.uniform([Interval(0.5, -1.0), Interval(0.55, -1.0)], disjoint=True)


def test_log_density_at():
    mu = PiecewiseMeasure.uniform([Interval(0.25, math.log(0.1)), Interval(0.75, math.log(0.2))], [0.5, 0.5])
    ld = mu.log_density_at([0.25, 0.75, 0.5])
    assert ld[0] == pytest.approx(math.log(5))
    assert ld[1] == pytest.approx(math.log(2.5))
    assert ld[2] == -math.inf


# ---------------------------------------------------------------------------
# properties

unit = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def disjoint_pair(draw):
    la = math.exp(draw(st.floats(math.log(1e-7), math.log(0.4))))
    lb = math.exp(draw(st.floats(math.log(1e-7), math.log(0.4))))
    gap = math.exp(draw(st.floats(math.log(1e-9), math.log(0.4))))
    assume(la + lb + gap < 1.0)
    lo = draw(st.floats(0.0, 1.0 - la - lb - gap))
    a = Interval(lo + la / 2, math.log(la))
    b = Interval(lo + la + gap + lb / 2, math.log(lb))
    return (a, b) if draw(st.booleans()) else (b, a)


@st.composite
def disjoint_measure(draw, max_atoms=6):
    k = draw(st.integers(1, max_atoms))
    cuts = sorted(draw(st.lists(unit, min_size=2 * k, max_size=2 * k, unique=True)))
    atoms = []
    for i in range(k):
        lo, hi = cuts[2 * i], cuts[2 * i + 1]
        if hi - lo < 1e-9:
            continue
        w = draw(st.floats(0.01, 1.0))
        atoms.append(Atom(Interval.from_endpoints(lo, hi), ONE, w))
    assume(atoms)
    mu = PiecewiseMeasure(tuple(atoms))
    return mu.normalized()


@given(disjoint_pair())
def test_closed_form_matches_quadrature(pair):
    a, b = pair
    cf = pair_interaction_closed_form(a, ONE, b, ONE)
    qv = interaction_quadrature(a, ONE, b, ONE, 1e-12)
    assert cf == pytest.approx(qv, rel=1e-9, abs=1e-12)


@given(disjoint_pair(), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_farfield_certificate(pair, fa, fb):
    a, b = pair
    exact = pair_interaction_closed_form(a, DensitySpec.constant(fa), b, DensitySpec.constant(fb))
    val, bound = farfield_interaction(a, fa, b, fb)
    assert abs(exact - val) <= bound * (1 + 1e-12) + 1e-15


@given(disjoint_measure(), disjoint_measure())
def test_mutual_energy_symmetric_exactly(mu, nu):
    assert mutual_energy(mu, nu) == mutual_energy(nu, mu)


@given(disjoint_measure(), disjoint_measure(), st.floats(0.01, 100.0))
def test_bilinearity(mu, nu, c):
    base = mutual_energy(mu, nu)
    scaled = mutual_energy(mu, nu.scaled(c))
    assert scaled == pytest.approx(c * base, rel=1e-12, abs=1e-14)


@given(disjoint_measure(), disjoint_measure())
def test_positivity_for_probability_measures(mu, nu):
    assert mutual_energy(mu, nu) > 0


@given(disjoint_measure(), st.floats(-0.5, 0.5))
def test_translation_invariance(mu, t):
    lo = min(iv.endpoints()[0] for iv in mu.intervals)
    hi = max(iv.endpoints()[1] for iv in mu.intervals)
    assume(0.0 <= lo + t and hi + t <= 1.0)
    shifted = PiecewiseMeasure(tuple(Atom(a.interval.shifted(t), a.density, a.weight) for a in mu.atoms))
    assert measure_energy(shifted).total == pytest.approx(measure_energy(mu).total, abs=1e-12, rel=1e-12)


@given(disjoint_measure(), st.floats(1e-6, 0.999), unit)
def test_scaling_law(mu, beta, about):
    contracted = PiecewiseMeasure(tuple(Atom(a.interval.scaled(beta, about), a.density, a.weight)
                                        for a in mu.atoms))
    shift = -math.log(beta)
    assert measure_energy(contracted).total == pytest.approx(measure_energy(mu).total + shift, abs=4e-10)


def test_vectorised_pair_energy_matches_scalar():
    rng = np.random.default_rng(3)
    d = rng.uniform(0.01, 1, 200)
    ha = rng.uniform(0, 1, 200) * d / 2
    hb = rng.uniform(0, 1, 200) * (d - ha)
    vec = uniform_pair_energy(d, ha, hb)
    for i in range(0, 200, 17):
        assert vec[i] == pytest.approx(float(uniform_pair_energy(d[i], ha[i], hb[i])), rel=1e-14)


def test_energy_threads_bitwise_identical():
    rng = np.random.default_rng(9)
    n = 700
    c = np.sort(rng.random(n))
    mu = PiecewiseMeasure.uniform([Interval(float(x), -30.0) for x in c])
    assert measure_energy(mu, threads=1).total == measure_energy(mu, threads=3).total


def test_farfield_substitution_within_certificate():
    from logcap.kernel import FlatAtoms, labelled_energy
    rng = np.random.default_rng(4)
    n = 400
    c = np.sort(rng.random(n))
    gaps = np.diff(c).min()
    ll = np.full(n, math.log(gaps * 0.01))
    fa = FlatAtoms(c, ll, np.full(n, 1.0 / n))
    exact, _ = labelled_energy(fa, tol=0.0)
    approx, _ = labelled_energy(fa, tol=1.0)
    assert approx.far_field_bound > 0
    assert abs(exact.outer_sum - approx.outer_sum) <= approx.far_field_bound
