"""Equilibrium measures and capacities of finite unions of intervals.

Panels carry uniform densities; the Gram matrix uses the exact pair
energies from the kernel.  Geometry is kept relative to each source
interval so very short intervals keep full precision, and the matrix is
assembled for the set rescaled to unit span (the log of the span is added
back to the energy).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._panels import SELF_ENERGY_UNIT, uniform_pair_energy
from .kernel import Interval, find_overlap

log = logging.getLogger(__name__)

__all__ = [
    "CapacityEstimate",
    "DensityProfile",
    "Discretization",
    "SingularSystemError",
    "discretize",
    "equilibrium_density_profile",
    "refine_estimate",
    "solve_equilibrium",
]

NEG_TOL = 1e-8


class SingularSystemError(RuntimeError):
    """The panel system could not be solved; refine or coarsen the discretisation."""


@dataclass
class Discretization:
    """Panels of a disjoint interval union.

    ``rel_mid``/``rel_half`` are in units of the owner's length, measured
    from the owner's centre.
    """

    owners: list[Interval]
    owner: np.ndarray
    rel_mid: np.ndarray
    rel_half: np.ndarray
    grading: str = "cosine"

    def __len__(self) -> int:
        return self.owner.size

    @property
    def owner_lengths(self) -> np.ndarray:
        return np.array([iv.length for iv in self.owners])

    @property
    def mid(self) -> np.ndarray:
        c = np.array([iv.center for iv in self.owners])
        return c[self.owner] + self.owner_lengths[self.owner] * self.rel_mid

    @property
    def width(self) -> np.ndarray:
        return 2.0 * self.owner_lengths[self.owner] * self.rel_half

    @property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        m, w = self.mid, self.width
        return m - 0.5 * w, m + 0.5 * w


def _allocate(lengths: np.ndarray, budget: int) -> np.ndarray:
    """Largest-remainder split of ``budget`` proportional to ``lengths`` with at least one each."""
    k = lengths.size
    share = lengths / lengths.sum() * budget
    counts = np.maximum(1, np.floor(share).astype(int))
    while counts.sum() > budget:
        i = int(np.argmax(np.where(counts > 1, counts - share, -np.inf)))
        counts[i] -= 1
    rem = share - counts
    for i in np.argsort(-rem, kind="stable")[: max(0, budget - int(counts.sum()))]:
        counts[i] += 1
    return counts


def _nodes(p: int, grading: str) -> np.ndarray:
    t = np.arange(p + 1) / p
    if grading == "cosine":
        x = 0.5 * (1.0 - np.cos(np.pi * t))
        x[0], x[-1] = 0.0, 1.0
        return x
    if grading == "uniform":
        return t
    raise ValueError(f"unknown grading {grading!r}")


def discretize(intervals, budget: int, grading: str = "cosine") -> Discretization:
    """Split each interval into panels (endpoint-graded), at least one panel per interval."""
    owners = []
    for iv in intervals:
        if not isinstance(iv, Interval):
            iv = Interval.from_endpoints(*iv)
        eff = iv.effective() if iv.clipped else iv
        lo, hi = eff.endpoints()
        if not (eff.length > 0.0) or hi <= lo:
            log.warning("dropping zero-length interval centred at %r", iv.center)
            continue
        owners.append(eff)
    if not owners:
        raise ValueError("no interval of positive length to discretise")
    if budget < len(owners):
        raise ValueError(f"panel budget {budget} below the number of intervals {len(owners)}")
    if find_overlap(owners) is not None:
        raise ValueError("intervals must be pairwise disjoint")
    counts = _allocate(np.array([o.length for o in owners]), budget)
    own, mids, halves = [], [], []
    for j, p in enumerate(counts):
        x = _nodes(int(p), grading)
        mids.append(0.5 * (x[1:] + x[:-1]) - 0.5)
        halves.append(0.5 * np.diff(x))
        own.append(np.full(int(p), j))
    return Discretization(owners, np.concatenate(own), np.concatenate(mids), np.concatenate(halves), grading)


def gram_matrix(d: Discretization):
    """Pair energies of unit-mass uniform panels for the set scaled to unit span; returns (K, shift)."""
    owners = d.owners
    centers = np.array([o.center for o in owners])
    loglens = np.array([o.loglen for o in owners])
    if len(owners) == 1:
        log_span = loglens[0]
    else:
        lo = min(o.endpoints()[0] for o in owners)
        hi = max(o.endpoints()[1] for o in owners)
        log_span = math.log(hi - lo)
    scale = np.exp(loglens - log_span)
    s = scale[d.owner]
    mid = (centers[d.owner] - centers[0]) / math.exp(log_span) + s * d.rel_mid
    half = s * d.rel_half
    same_owner = d.owner[:, None] == d.owner[None, :]
    # same-owner distances from relative offsets keep precision for tiny intervals
    dist_same = np.abs(s[:, None] * (d.rel_mid[:, None] - d.rel_mid[None, :]))
    dist_diff = np.abs(mid[:, None] - mid[None, :])
    dist = np.where(same_owner, dist_same, dist_diff)
    n = len(d)
    K = np.empty((n, n))
    iu = np.triu_indices(n, 1)
    K[iu] = uniform_pair_energy(dist[iu], half[iu[0]], half[iu[1]])
    K[(iu[1], iu[0])] = K[iu]
    K[np.diag_indices(n)] = -np.log(2.0 * half) + SELF_ENERGY_UNIT
    return K, -log_span


def _solve_bordered(K: np.ndarray):
    ones = np.ones(K.shape[0])
    try:
        c = linalg.cho_factor(K, check_finite=False)
        v = linalg.cho_solve(c, ones, check_finite=False)
    except linalg.LinAlgError:
        try:
            v = linalg.solve(K, ones, assume_a="sym", check_finite=False)
        except linalg.LinAlgError as exc:
            raise SingularSystemError("panel system is singular; refine the panels") from exc
    total = float(np.sum(v))
    if not (total > 0.0 and math.isfinite(total)):
        raise SingularSystemError("panel system is not positive; refine the panels")
    return v / total, 1.0 / total


def _active_set(K: np.ndarray, max_iter: int = 100):
    """Nonnegative minimiser of w^T K w with sum(w) = 1 (active-set on the bordered system)."""
    n = K.shape[0]
    free = np.ones(n, dtype=bool)
    w = np.zeros(n)
    gamma = math.nan
    for it in range(max_iter):
        sub = K[np.ix_(free, free)]
        wf, gamma = _solve_bordered(sub)
        if np.any(wf < 0):
            idx = np.flatnonzero(free)
            free[idx[wf < 0]] = False
            continue
        w[:] = 0.0
        w[free] = wf
        pot = K @ w
        viol = (~free) & (pot < gamma - 1e-12 * abs(gamma))
        if not viol.any():
            return w, gamma, it + 1
        free[int(np.argmin(np.where(viol, pot, np.inf)))] = True
    log.warning("active-set iteration limit reached")
    return w, gamma, max_iter


@dataclass
class CapacityEstimate:
    energy: float
    capacity: float
    panel_count: int
    error_estimate: float
    weights: np.ndarray
    discretization: Discretization | None = None
    potential_spread: float = math.nan
    projected: bool = False
    diagnostics: dict = field(default_factory=dict)


def solve_equilibrium(d: Discretization) -> CapacityEstimate:
    if len(d) < 1:
        raise ValueError("need at least one panel")
    K, shift = gram_matrix(d)
    w, gamma = _solve_bordered(K)
    projected = False
    if np.any(w < -NEG_TOL):
        w, gamma, iters = _active_set(K)
        projected = True
        log.info("nonnegativity projection used (%d iterations)", iters)
    w = np.maximum(w, 0.0)
    w /= w.sum()
    energy = float(w @ K @ w) + shift
    pot = K @ w
    support = w > 0
    spread = float(np.ptp(pot[support])) if support.any() else math.nan
    return CapacityEstimate(energy, math.exp(-energy), len(d), math.nan, w, d, spread, projected)


def refine_estimate(intervals, budgets, grading: str = "cosine") -> CapacityEstimate:
    """Solves at increasing budgets and Richardson-extrapolates the energy with a fitted order."""
    budgets = list(budgets)
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be increasing")
    sols = [solve_equilibrium(discretize(intervals, b, grading)) for b in budgets]
    E = np.array([s.energy for s in sols])
    best = sols[-1]
    diag = {"budgets": budgets, "energies": E.tolist(), "monotone": True, "order": math.nan}
    if len(sols) < 2:
        return best
    d1 = np.diff(E)
    if len(sols) < 3:
        est = CapacityEstimate(best.energy, best.capacity, best.panel_count, abs(float(d1[-1])),
                               best.weights, best.discretization, best.potential_spread, best.projected, diag)
        return est
    r = budgets[-1] / budgets[-2]
    r_prev = budgets[-2] / budgets[-3]
    monotone = bool(np.all(np.sign(d1) == np.sign(d1[-1])) and
                    np.all(np.abs(d1[1:]) < np.abs(d1[:-1])))
    diag["monotone"] = monotone
    if not monotone or d1[-1] == 0.0:
        diag["flag"] = "non-monotone convergence; returning the finest solve"
        return CapacityEstimate(best.energy, best.capacity, best.panel_count, abs(float(d1[-1])),
                                best.weights, best.discretization, best.potential_spread, best.projected, diag)
    p = math.log(abs(d1[-2]) / abs(d1[-1])) / math.log(0.5 * (r + r_prev))
    correction = float(d1[-1]) / (r ** p - 1.0)
    energy = best.energy + correction
    diag["order"] = p
    diag["finest_energy"] = best.energy
    return CapacityEstimate(energy, math.exp(-energy), best.panel_count, abs(correction),
                            best.weights, best.discretization, best.potential_spread, best.projected, diag)


@dataclass
class DensityProfile:
    x: np.ndarray
    density: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.x, self.density)

    def table(self) -> np.ndarray:
        return np.column_stack([self.x, self.density])


def equilibrium_density_profile(estimate: CapacityEstimate) -> DensityProfile:
    """Per-panel weight / width at panel midpoints."""
    d = estimate.discretization
    if d is None:
        raise ValueError("estimate carries no discretisation")
    mid, width = d.mid, d.width
    order = np.argsort(mid, kind="stable")
    return DensityProfile(mid[order], (estimate.weights / width)[order])
