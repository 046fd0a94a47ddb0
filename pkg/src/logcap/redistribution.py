"""Single- and multi-level averaged measures and the nested re-distribution driver.

A level n contributes the block A_n = {n, ..., 2n-1}: the averaged measure
(1/n) Σ f(x) dx|_{I_k} / |I_k|, normalised to unit mass.  The multi-level
measure averages the normalised level measures over n, 2n, ..., 2^{q-1} n.
Inside one step the density f is evaluated at interval centres and taken as
constant on each (exponentially short) interval.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .kernel import (
    Atom,
    DensitySpec,
    EnergyBreakdown,
    FlatAtoms,
    Interval,
    PiecewiseMeasure,
    labelled_energy,
    measure_energy,
)
from .setgen import CenterSequence, DensityTable, LengthSchedule, containment, default_q, find_overlaps

log = logging.getLogger(__name__)

__all__ = [
    "DisjointnessError",
    "LevelExhaustionError",
    "LevelMeasure",
    "NestedRunError",
    "RedistributionConfig",
    "StepResult",
    "clip_equilibrium",
    "component_measure",
    "multi_level",
    "nested_driver",
    "redistribution_step",
    "single_level",
    "substitute_density",
]

LOG4 = math.log(4.0)


class DisjointnessError(ValueError):
    def __init__(self, message: str, pair=None):
        super().__init__(message)
        self.pair = pair


class LevelExhaustionError(RuntimeError):
    def __init__(self, message: str, occupancy: float, last_level: int | None, attempts: list):
        super().__init__(message)
        self.occupancy = occupancy
        self.last_level = last_level
        self.attempts = attempts


class NestedRunError(RuntimeError):
    """A stage of the nested driver failed; ``completed`` holds the earlier stages."""

    def __init__(self, message: str, completed: list, cause: Exception):
        super().__init__(message)
        self.completed = completed
        self.cause = cause


@dataclass
class RedistributionConfig:
    schedule: LengthSchedule
    centers: CenterSequence
    f: DensitySpec = field(default_factory=DensitySpec.constant)
    phi: DensityTable = field(default_factory=DensityTable.uniform)
    q_override: int | None = None
    tol: float = 1e-10
    occupancy_floor: float = 0.5
    min_atoms: int = 8
    max_index: int = 2 ** 22
    max_atoms: int = 40_000
    threads: int = 1

    def __post_init__(self):
        if self.f.sup() <= 0 or not math.isfinite(self.f.sup()):
            raise ValueError("f must be bounded and not identically zero")
        if self.q_override is not None and self.q_override < 1:
            raise ValueError("q_override must be >= 1")

    def q_for(self, m: int) -> int:
        return self.q_override if self.q_override is not None else default_q(max(m, 2))


# ---------------------------------------------------------------------------
# measures


def component_measure(f: DensitySpec, interval: Interval) -> PiecewiseMeasure:
    """mu_k = f(x) dx|_{I_k} / |I_k| as a one-atom measure (not normalised)."""
    eff = interval.effective()
    lo, hi = eff.endpoints()
    dens = f.restrict(lo, hi) if not f.is_constant else f
    if not f.is_constant and hi - lo < 1e-9:
        dens = DensitySpec.constant(float(f(eff.center)))
    return PiecewiseMeasure((Atom(interval, dens, 1.0),))


def effective_geometry(c: np.ndarray, ll: np.ndarray):
    """Centres and log-lengths after clipping to [0, 1]."""
    half = 0.5 * np.exp(ll)
    lo = c - half
    hi = c + half
    clip = (lo < 0.0) | (hi > 1.0)
    if not clip.any():
        return c, ll
    c = c.copy()
    ll = ll.copy()
    lo_c = np.maximum(lo[clip], 0.0)
    hi_c = np.minimum(hi[clip], 1.0)
    c[clip] = 0.5 * (lo_c + hi_c)
    ll[clip] = np.log(hi_c - lo_c)
    return c, ll


@dataclass
class LevelMeasure:
    """Atoms of an averaged measure in array form, grouped by level."""

    levels: list[int]
    indices: np.ndarray
    centers: np.ndarray
    loglens: np.ndarray
    masses: np.ndarray
    bounds: np.ndarray
    kept: list[int]
    straddlers: list[int]
    log_norms: list[float]

    def flat(self) -> FlatAtoms:
        c, ll = effective_geometry(self.centers, self.loglens)
        return FlatAtoms(c, ll, self.masses)

    def to_measure(self) -> PiecewiseMeasure:
        one = DensitySpec.constant(1.0)
        atoms = tuple(Atom(Interval(float(c), float(l)), one, float(m))
                      for c, l, m in zip(self.centers, self.loglens, self.masses))
        mass = math.fsum(self.masses)
        return PiecewiseMeasure(atoms, probability=abs(mass - 1.0) <= 1e-9)

    def __len__(self) -> int:
        return self.indices.size


def _level_atoms(config: RedistributionConfig, L: int, logf: Callable, support=None):
    idx = np.arange(L, 2 * L)
    c = config.centers.take(L, 2 * L)
    ll = config.schedule.loglens(idx)
    stray = 0
    if support is not None:
        half = 0.5 * np.exp(ll)
        v = np.column_stack([np.maximum(c - half, 0.0), np.minimum(c + half, 1.0)])
        inside, stray = containment(support, v)
        idx, c, ll = idx[inside], c[inside], ll[inside]
    lf = logf(c) if idx.size else np.zeros(0)
    pos = np.isfinite(lf)
    return idx[pos], c[pos], ll[pos], lf[pos], stray


def build_levels(config: RedistributionConfig, levels: list[int], logf: Callable, support=None,
                 normalise: bool = True, level_weight: float | None = None) -> LevelMeasure:
    """Averaged measures at each level, each normalised (or scaled by 1/L) and weighted equally."""
    parts = []
    kept, strays, norms = [], [], []
    w = level_weight if level_weight is not None else 1.0 / len(levels)
    for L in levels:
        idx, c, ll, lf, stray = _level_atoms(config, L, logf, support)
        if normalise:
            if idx.size == 0:
                raise LevelExhaustionError(f"level {L} has no interval inside the support", 0.0, L, [])
            lz = float(logsumexp(lf))
            m = w * np.exp(lf - lz)
            norms.append(lz - math.log(L))
        else:
            m = w * np.exp(lf) / L
            norms.append(float(logsumexp(lf)) - math.log(L) if idx.size else -math.inf)
        parts.append((idx, c, ll, m))
        kept.append(int(idx.size))
        strays.append(stray)
    sizes = [p[0].size for p in parts]
    bounds = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
    cat = [np.concatenate([p[i] for p in parts]) for i in range(4)]
    lm = LevelMeasure(list(levels), cat[0], cat[1], cat[2], cat[3], bounds, kept, strays, norms)
    pairs = find_overlaps(lm.centers, lm.loglens, limit=1)
    if pairs:
        i, j = pairs[0]
        k1, k2 = int(lm.indices[i]), int(lm.indices[j])
        raise DisjointnessError(f"intervals I_{k1} and I_{k2} overlap", (k1, k2))
    return lm


def _logf_from_spec(f: DensitySpec) -> Callable:
    if f.is_constant:
        v = math.log(f.value) if f.value > 0 else -math.inf
        return lambda c: np.full(np.shape(c), v)

    def logf(c):
        with np.errstate(divide="ignore"):
            return np.log(f(c))
    return logf


def single_level(config: RedistributionConfig, n: int):
    """(mu_hat_n, breakdown of the unnormalised average mu_{A_n})."""
    lm = build_levels(config, [n], _logf_from_spec(config.f), normalise=False, level_weight=1.0)
    br, _ = labelled_energy(lm.flat(), None, config.tol, config.threads)
    z = float(np.sum(lm.masses))
    breakdown = EnergyBreakdown(br.self_sum, br.outer_sum, z, br.total, br.far_field_bound)
    lm.masses = lm.masses / z
    return lm.to_measure(), breakdown


def _multi(config: RedistributionConfig, m: int, logf: Callable, support=None, q: int | None = None):
    q = q if q is not None else config.q_for(m)
    levels = [m * 2 ** s for s in range(q)]
    lm = build_levels(config, levels, logf, support)
    br, cells = labelled_energy(lm.flat(), lm.bounds, config.tol, config.threads)
    self_part = float(np.trace(cells))
    outer_part = float(np.sum(cells) - self_part)
    total = self_part + outer_part
    breakdown = EnergyBreakdown(self_part, outer_part, float(np.sum(lm.masses)), total,
                                br.far_field_bound, tuple(map(tuple, cells.tolist())))
    return lm, breakdown


def multi_level(config: RedistributionConfig, m: int):
    """(mu^m, breakdown); ``breakdown.cells[s][t]`` is the level-s / level-t interaction."""
    lm, br = _multi(config, m, _logf_from_spec(config.f))
    return lm.to_measure(), br


# ---------------------------------------------------------------------------
# densities


def _f01(x):
    return 1.0 / (np.pi * np.sqrt(x * (1.0 - x)))


def clip_equilibrium(delta_clip: float, points: int = 4097) -> DensitySpec:
    """min(f_[0,1](x), f_[0,1](delta_clip)) renormalised; piecewise linear on a uniform grid."""
    if not 0.0 < delta_clip < 0.5:
        raise ValueError("delta_clip must lie in (0, 1/2)")
    x = np.linspace(0.0, 1.0, points)
    cap = float(_f01(delta_clip))
    with np.errstate(divide="ignore"):
        y = np.minimum(_f01(x), cap)
    d = DensitySpec.sampled(y)
    return d.scaled(1.0 / d.mean())


def substitute_density(h: DensitySpec, table: DensityTable, floor: float = 1e-9, points: int | None = None):
    """f = h / phi (for use as the block-average density); returns (f, capped_mass).

    Where phi is below ``floor * sup(phi)`` the divisor is capped at that
    floor; the h-mass affected is reported.  phi vanishing on a whole grid
    cell where h is positive is an error.
    """
    if h.is_constant and table.is_uniform:
        return DensitySpec.constant(h.value / float(table.values[0])), 0.0
    if points is None:
        points = max(4097, 0 if h.is_constant else len(h.ordinates))
    x = np.linspace(0.0, 1.0, points)
    hv = h(x)
    pv = table(x)
    dead = (pv[1:] == 0) & (pv[:-1] == 0) & ((hv[1:] > 0) | (hv[:-1] > 0))
    if dead.any():
        k = int(np.flatnonzero(dead)[0])
        raise ValueError(f"phi vanishes on [{x[k]:.6g}, {x[k + 1]:.6g}] where h is positive")
    fl = floor * table.sup
    capped = pv < fl
    cm = float(np.trapezoid(np.where(capped, hv, 0.0), x)) if capped.any() else 0.0
    if cm:
        log.info("phi capped below %.3g; affected h-mass %.3g", fl, cm)
    return DensitySpec.sampled(hv / np.maximum(pv, fl)), cm


# ---------------------------------------------------------------------------
# re-distribution step


@dataclass
class StepResult:
    level: int
    nu_prime: PiecewiseMeasure
    energy_before: float
    energy_after: float
    budget: float
    discarded_straddlers: int
    q: int = 1
    occupancy: float = math.nan
    breakdown: EnergyBreakdown | None = None
    attempts: list = field(default_factory=list)
    levels: LevelMeasure | None = None

    @property
    def increment(self) -> float:
        return self.energy_after - self.energy_before


def _support_pairs(nu: PiecewiseMeasure) -> np.ndarray:
    rows = [a.interval.endpoints() for a in nu.atoms if a.weight > 0]
    s = np.array(rows, dtype=float).reshape(-1, 2)
    return s[np.argsort(s[:, 0], kind="stable")]


def _merge(s: np.ndarray) -> np.ndarray:
    """Union of sorted intervals as disjoint pieces (touching pieces merged)."""
    out = []
    for lo, hi in s:
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return np.array(out).reshape(-1, 2)


def _phi_mass(table: DensityTable, s: np.ndarray) -> float:
    w = s[:, 1] - s[:, 0]
    small = w < 1e-6
    mass = np.where(small, table(0.5 * (s[:, 0] + s[:, 1])) * w, table.cdf(s[:, 1]) - table.cdf(s[:, 0]))
    return float(np.sum(mass))


def _nu_logf(nu: PiecewiseMeasure, table: DensityTable) -> Callable:
    """log of (density of nu) / phi."""
    def logf(c):
        with np.errstate(divide="ignore"):
            return nu.log_density_at(c) - np.log(table(c))
    return logf


def supported_within(inner: LevelMeasure, support: np.ndarray) -> bool:
    half = 0.5 * np.exp(inner.loglens)
    v = np.column_stack([np.maximum(inner.centers - half, 0.0), np.minimum(inner.centers + half, 1.0)])
    inside, _ = containment(support, v)
    return bool(inside.all())


def redistribution_step(nu: PiecewiseMeasure, config: RedistributionConfig, eps: float, m_min: int,
                        energy_before: float | None = None) -> StepResult:
    """First dyadic level n >= m_min whose multi-level measure inside supp(nu) costs less than eps.

    Levels whose intervals overlap, or whose occupancy of supp(nu) is below
    the floor, are skipped without an energy evaluation.
    """
    if not eps > 0:
        raise ValueError("budget eps must be positive")
    if m_min < 1:
        raise ValueError("m_min must be >= 1")
    if abs(nu.total_mass - 1.0) > 1e-9:
        raise ValueError("nu must be a probability measure")
    if energy_before is None:
        energy_before = measure_energy(nu, config.tol, config.threads).total
    support = _merge(_support_pairs(nu))
    phi_mass = _phi_mass(config.phi, support)
    logf = _nu_logf(nu, config.phi)
    attempts = []
    best_occ = 0.0
    n = m_min
    while True:
        q = config.q_for(n)
        top = 2 ** q * n
        if top > config.max_index:
            raise LevelExhaustionError(
                f"index budget {config.max_index} exhausted before a level met the budget "
                f"(best occupancy {best_occ:.3g})", best_occ, attempts[-1]["level"] if attempts else None, attempts)
        levels = [n * 2 ** s for s in range(q)]
        rec = {"level": n, "q": q}
        counts = [_level_atoms(config, L, logf, support)[0].size for L in levels]
        occ = [c / L / phi_mass if phi_mass > 0 else 0.0 for c, L in zip(counts, levels)]
        rec["occupancy"] = min(occ)
        best_occ = max(best_occ, rec["occupancy"])
        if rec["occupancy"] < config.occupancy_floor or min(counts) < config.min_atoms:
            rec["outcome"] = "low occupancy"
            attempts.append(rec)
            n *= 2
            continue
        if sum(counts) > config.max_atoms:
            rec["outcome"] = "atom budget"
            attempts.append(rec)
            raise LevelExhaustionError(f"level {n} needs {sum(counts)} atoms, above the atom budget",
                                       best_occ, n, attempts)
        try:
            lm, br = _multi(config, n, logf, support, q)
        except DisjointnessError as exc:
            rec["outcome"] = f"overlap {exc.pair}"
            attempts.append(rec)
            n *= 2
            continue
        rec["energy"] = br.total
        attempts.append(rec)
        if br.total < energy_before + eps:
            rec["outcome"] = "accepted"
            nu_prime = lm.to_measure()
            if not supported_within(lm, support):
                raise AssertionError("support containment violated")
            log.info("step accepted at level %d (q=%d): %.6g -> %.6g", n, q, energy_before, br.total)
            return StepResult(n, nu_prime, energy_before, br.total, eps, int(sum(lm.straddlers)), q,
                              rec["occupancy"], br, attempts, lm)
        rec["outcome"] = "over budget"
        n *= 2


def initial_measure(eps: float, clips=(0.25, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)):
    """Clipped equilibrium density on [0, 1] with energy below log 4 + eps; returns (nu0, energy, delta)."""
    for dc in clips:
        d = clip_equilibrium(dc)
        nu = PiecewiseMeasure((Atom(Interval(0.5, 0.0), d, 1.0),), probability=True)
        e = measure_energy(nu).total
        if e < LOG4 + eps:
            return nu, e, dc
    raise ValueError(f"no clip level reaches log 4 + {eps}")


def nested_driver(config: RedistributionConfig, eps: float, stages: int, m_min: int = 64):
    """Stages of re-distribution with budgets eps / 2^{i+1}, starting from a clipped equilibrium density."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if stages < 1:
        raise ValueError("stages must be >= 1")
    nu, e0, dc = initial_measure(eps)
    log.info("initial clipped density delta=%g, energy %.6g", dc, e0)
    results: list[StepResult] = []
    energy = e0
    start = m_min
    for i in range(1, stages + 1):
        budget = eps / 2 ** (i + 1)
        try:
            res = redistribution_step(nu, config, budget, start, energy_before=energy)
        except (LevelExhaustionError, DisjointnessError) as exc:
            raise NestedRunError(f"stage {i} failed: {exc}", results, exc) from exc
        results.append(res)
        nu, energy = res.nu_prime, res.energy_after
        start = 2 ** (res.q + 1) * res.level
    return NestedRun(e0, dc, eps, results)


@dataclass
class NestedRun:
    initial_energy: float
    delta_clip: float
    eps: float
    stages: list[StepResult]

    @property
    def final_energy(self) -> float:
        return self.stages[-1].energy_after if self.stages else self.initial_energy

    def ledger(self) -> list[dict]:
        return [{"stage": i + 1, "level": s.level, "budget": s.budget, "increment": s.increment,
                 "within_budget": s.increment < s.budget} for i, s in enumerate(self.stages)]

    @property
    def telescoping_ok(self) -> bool:
        inc = sum(s.increment for s in self.stages)
        return inc < sum(s.budget for s in self.stages) < self.eps and all(
            s.increment < s.budget for s in self.stages)
