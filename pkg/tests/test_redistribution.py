import math

import numpy as np
import pytest

from logcap.kernel import Atom, DensitySpec, Interval, PiecewiseMeasure, measure_energy
from logcap.redistribution import (
    DisjointnessError,
    LevelExhaustionError,
    NestedRunError,
    RedistributionConfig,
    clip_equilibrium,
    component_measure,
    initial_measure,
    multi_level,
    nested_driver,
    redistribution_step,
    single_level,
    substitute_density,
)
from logcap.setgen import CenterSequence, DensityTable, LengthSchedule

SEED = 20240601


def _config(lam=1.0, q=None, seed=SEED, **kw):
    return RedistributionConfig(LengthSchedule(lam, 1.0), CenterSequence.iid(DensityTable.uniform(), seed),
                                q_override=q, **kw)


def test_component_measure():
    mu = component_measure(DensitySpec.constant(2.0), Interval(0.5, -3.0))
    assert mu.total_mass == pytest.approx(2.0)


def test_single_level_self_sum_closed_form():
    n = 64
    mu, br = single_level(_config(), n)
    expect = sum(k + 1.5 for k in range(n, 2 * n)) / n ** 2
    assert br.self_sum == pytest.approx(expect, rel=1e-13)
    assert br.normalization == pytest.approx(1.0)
    assert mu.total_mass == pytest.approx(1.0)


def test_single_level_matches_kernel_energy():
    mu, br = single_level(_config(), 32)
    assert br.total == pytest.approx(measure_energy(mu).total, rel=1e-12)


def test_multi_level_cells():
    mu, br = multi_level(_config(q=3), 64)
    cells = np.array(br.cells)
    assert cells.shape == (3, 3)
    np.testing.assert_allclose(cells, cells.T, rtol=1e-12)
    assert br.total == pytest.approx(cells.sum(), rel=1e-14)
    assert br.self_sum == pytest.approx(np.trace(cells), rel=1e-14)
    assert mu.total_mass == pytest.approx(1.0)
    assert br.total == pytest.approx(measure_energy(mu).total, rel=1e-10)


def test_multi_level_energy_floor():
    # with q levels the per-level self energies contribute about 1.5 lam / q
    _, br = multi_level(_config(q=4), 256)
    assert 1.5 < br.total < 1.5 + 1.5 / 4 + 0.05


def test_overlapping_level_raises():
    c = np.full(200, 0.5) + np.linspace(0, 1e-6, 200)
    cfg = RedistributionConfig(LengthSchedule(0.1, 1.0), CenterSequence.explicit(c))
    with pytest.raises(DisjointnessError) as err:
        single_level(cfg, 8)
    assert err.value.pair is not None


def test_clip_equilibrium_approaches_log4():
    energies = []
    for dc in (0.1, 0.01, 0.001):
        d = clip_equilibrium(dc)
        assert d.mean() == pytest.approx(1.0)
        nu = PiecewiseMeasure((Atom(Interval(0.5, 0.0), d, 1.0),))
        energies.append(measure_energy(nu).total)
    assert energies[0] > energies[1] > energies[2] > math.log(4)
    with pytest.raises(ValueError):
        clip_equilibrium(0.7)


def test_initial_measure():
    nu, e, dc = initial_measure(0.05)
    assert e < math.log(4) + 0.05
    assert nu.total_mass == pytest.approx(1.0)


def test_substitute_density():
    f, capped = substitute_density(DensitySpec.constant(1.0), DensityTable.uniform())
    assert f.is_constant and f.value == 1.0 and capped == 0.0
    table = DensityTable.from_function(lambda x: 0.5 + x)
    h = clip_equilibrium(0.05)
    f, capped = substitute_density(h, table)
    x = np.linspace(0.01, 0.99, 13)
    np.testing.assert_allclose(f(x) * table(x), h(x), rtol=1e-3)
    assert capped == 0.0


def test_step_accepts_and_stays_inside_support():
    nu = PiecewiseMeasure.uniform([Interval.from_endpoints(0.1, 0.4), Interval.from_endpoints(0.6, 0.9)])
    cfg = _config(lam=0.25, q=4)
    res = redistribution_step(nu, cfg, eps=0.6, m_min=64)
    assert res.energy_after < res.energy_before + res.budget
    assert res.attempts[-1]["outcome"] == "accepted"
    assert res.nu_prime.total_mass == pytest.approx(1.0)
    for iv in res.nu_prime.intervals:
        lo, hi = iv.endpoints()
        assert (0.1 <= lo and hi <= 0.4) or (0.6 <= lo and hi <= 0.9)
    assert res.energy_after == pytest.approx(measure_energy(res.nu_prime).total, rel=1e-9)


def test_step_follows_density_ratio():
    # nu puts 3/4 of its mass on the left piece; so should nu'
    nu = PiecewiseMeasure.uniform([Interval.from_endpoints(0.0, 0.5), Interval.from_endpoints(0.5, 1.0)],
                                  [0.75, 0.25])
    res = redistribution_step(nu, _config(q=2), eps=1.0, m_min=128)
    left = sum(a.weight for a in res.nu_prime.atoms if a.interval.center < 0.5)
    assert left == pytest.approx(0.75, abs=0.03)


def test_step_budget_exhaustion():
    nu = PiecewiseMeasure.uniform([Interval(0.5, 0.0)])
    cfg = _config(q=2, max_index=1024)
    with pytest.raises(LevelExhaustionError) as err:
        redistribution_step(nu, cfg, eps=1e-6, m_min=64)
    assert err.value.attempts


def test_step_validation():
    nu = PiecewiseMeasure.uniform([Interval(0.5, 0.0)])
    with pytest.raises(ValueError):
        redistribution_step(nu, _config(), eps=0.0, m_min=8)
    with pytest.raises(ValueError):
        redistribution_step(nu.scaled(2.0), _config(), eps=0.1, m_min=8)


def test_nested_driver_single_stage():
    run = nested_driver(_config(lam=0.25, q=4), eps=0.8, stages=1, m_min=64)
    assert len(run.stages) == 1
    assert run.telescoping_ok
    assert run.final_energy < run.initial_energy + 0.8
    assert run.ledger()[0]["within_budget"]


def test_nested_driver_reports_completed_stages():
    cfg = _config(lam=0.25, q=4, max_index=2 ** 13)
    with pytest.raises(NestedRunError) as err:
        nested_driver(cfg, eps=0.8, stages=3, m_min=64)
    assert isinstance(err.value.cause, Exception)
