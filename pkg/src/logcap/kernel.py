"""Logarithmic interaction I(nu, mu) = ∬ -log|x - y| dnu(x) dmu(y) for interval measures.

Intervals are stored as ``(center, loglen)`` so that lengths like
``exp(-lambda * k)`` never have to be materialised for the energy formulas;
only centre distances and log-lengths enter.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._panels import (
    _OVERLAP_ABS,
    SELF_ENERGY_UNIT,
    PartialOverlapError,
    QuadratureBudgetError,
    panel_interaction,
    panels_from_grid,
    toeplitz_self,
    uniform_pair_energy,
)

log = logging.getLogger(__name__)

__all__ = [
    "SELF_ENERGY_UNIT",
    "Atom",
    "DensitySpec",
    "EnergyBreakdown",
    "Interval",
    "PartialOverlapError",
    "PiecewiseMeasure",
    "QuadratureBudgetError",
    "SingularPairError",
    "farfield_interaction",
    "interaction_quadrature",
    "measure_energy",
    "mutual_energy",
    "pair_interaction_closed_form",
    "self_energy_uniform",
    "split_measure",
    "uniform_pair_energy",
]

# row-block size for the O(n^2) sums; fixed so results do not depend on threads
_BLOCK = 256


class SingularPairError(ValueError):
    """Two centres coincide where a finite log-distance is required."""

    def __init__(self, message: str, pair=None):
        super().__init__(message)
        self.pair = pair


@dataclass(frozen=True)
class Interval:
    """Subinterval of [0, 1] given by its centre and natural-log length."""

    center: float
    loglen: float

    def __post_init__(self):
        if not (0.0 <= self.center <= 1.0):
            raise ValueError(f"center must lie in [0, 1], got {self.center!r}")
        if not (self.loglen <= 0.0) or math.isnan(self.loglen):
            raise ValueError(f"loglen must be <= 0, got {self.loglen!r}")

    @classmethod
    def from_endpoints(cls, lo: float, hi: float) -> "Interval":
        if not hi > lo:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        return cls(0.5 * (lo + hi), math.log(hi - lo))

    @property
    def length(self) -> float:
        return math.exp(self.loglen)

    @property
    def half(self) -> float:
        return 0.5 * math.exp(self.loglen)

    def endpoints(self) -> tuple[float, float]:
        """Materialised endpoints, clipped to [0, 1]."""
        h = self.half
        lo, hi = self.center - h, self.center + h
        if lo < 0.0 or hi > 1.0:
            log.debug("clipping interval centre=%r loglen=%r to [0,1]", self.center, self.loglen)
        return max(lo, 0.0), min(hi, 1.0)

    @property
    def clipped(self) -> bool:
        h = self.half
        return self.center - h < 0.0 or self.center + h > 1.0

    def effective(self) -> "Interval":
        """The geometry actually carrying mass (clipped to [0, 1])."""
        if not self.clipped:
            return self
        lo, hi = self.endpoints()
        return Interval(0.5 * (lo + hi), math.log(hi - lo))

    def contains(self, other: "Interval") -> bool:
        lo, hi = self.endpoints()
        olo, ohi = other.endpoints()
        return lo <= olo and ohi <= hi

    def overlaps(self, other: "Interval") -> bool:
        lo, hi = self.endpoints()
        olo, ohi = other.endpoints()
        return olo < hi and lo < ohi

    def scaled(self, beta: float, about: float = 0.0) -> "Interval":
        return Interval(about + beta * (self.center - about), self.loglen + math.log(beta))

    def shifted(self, t: float) -> "Interval":
        return Interval(self.center + t, self.loglen)


@dataclass(frozen=True, eq=False)
class DensitySpec:
    """Density on the unit reference interval: a constant or piecewise-linear ordinates."""

    kind: str
    value: float = 1.0
    ordinates: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "constant":
            if not (math.isfinite(self.value) and self.value >= 0.0):
                raise ValueError(f"constant density must be finite and >= 0, got {self.value!r}")
        elif self.kind == "sampled":
            ords = np.array(self.ordinates, dtype=float)
            if ords.ndim != 1 or ords.size < 2:
                raise ValueError("sampled density needs at least two ordinates")
            if not np.all(np.isfinite(ords)) or np.any(ords < 0.0):
                raise ValueError("sampled ordinates must be finite and >= 0")
            ords.setflags(write=False)
            object.__setattr__(self, "ordinates", ords)
        else:
            raise ValueError(f"unknown density kind {self.kind!r}")

    @classmethod
    def constant(cls, value: float = 1.0) -> "DensitySpec":
        return cls("constant", float(value))

    @classmethod
    def sampled(cls, ordinates) -> "DensitySpec":
        return cls("sampled", ordinates=np.asarray(ordinates, dtype=float))

    @classmethod
    def from_function(cls, func, points: int = 1025) -> "DensitySpec":
        t = np.linspace(0.0, 1.0, points)
        return cls.sampled(np.asarray(func(t), dtype=float))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, len(self.ordinates))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.is_constant:
            return np.full_like(t, self.value)
        return np.interp(t, self.grid(), self.ordinates)

    def mean(self) -> float:
        if self.is_constant:
            return self.value
        o = self.ordinates
        return float((np.sum(o) - 0.5 * (o[0] + o[-1])) / (o.size - 1))

    def sup(self) -> float:
        return self.value if self.is_constant else float(np.max(self.ordinates))

    def scaled(self, c: float) -> "DensitySpec":
        if self.is_constant:
            return DensitySpec.constant(self.value * c)
        return DensitySpec.sampled(self.ordinates * c)

    def restrict(self, lo: float, hi: float, points: int | None = None) -> "DensitySpec":
        """The density on the reference sub-interval [lo, hi], rescaled to [0, 1]."""
        if self.is_constant:
            return self
        if points is None:
            points = max(2, int(round((hi - lo) * (len(self.ordinates) - 1))) + 1)
        return DensitySpec.sampled(self(np.linspace(lo, hi, points)))

    def as_ordinates(self, points: int) -> np.ndarray:
        if self.is_constant:
            return np.full(points, self.value)
        if points == len(self.ordinates):
            return np.asarray(self.ordinates)
        return self(np.linspace(0.0, 1.0, points))

    def key(self) -> tuple:
        if self.is_constant:
            return ("c", self.value)
        return ("s",) + tuple(self.ordinates.tolist())


@dataclass(frozen=True, eq=False)
class Atom:
    """``weight * density((x - lo)/L) dx / L`` on one interval."""

    interval: Interval
    density: DensitySpec = field(default_factory=DensitySpec.constant)
    weight: float = 1.0

    def __post_init__(self):
        if not (self.weight >= 0.0 and math.isfinite(self.weight)):
            raise ValueError(f"atom weight must be finite and >= 0, got {self.weight!r}")

    @property
    def mass(self) -> float:
        return self.weight * self.density.mean()

    def key(self) -> tuple:
        return (self.interval.center, self.interval.loglen, self.weight) + self.density.key()


@dataclass(frozen=True, eq=False)
class PiecewiseMeasure:
    """Finite weighted collection of interval atoms."""

    atoms: tuple[Atom, ...]
    probability: bool = False
    disjoint: bool = False

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if self.probability and abs(self.total_mass - 1.0) > 1e-9:
            raise ValueError(f"probability flag set but total mass is {self.total_mass!r}")
        if self.disjoint:
            pair = find_overlap([a.interval for a in self.atoms])
            if pair is not None:
                raise PartialOverlapError(f"atoms {pair[0]} and {pair[1]} overlap")

    @classmethod
    def uniform(cls, intervals: Sequence[Interval], weights=None, **flags) -> "PiecewiseMeasure":
        if weights is None:
            weights = np.full(len(intervals), 1.0 / max(len(intervals), 1))
        atoms = tuple(Atom(iv, DensitySpec.constant(1.0), float(w)) for iv, w in zip(intervals, weights))
        return cls(atoms, **flags)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def total_mass(self) -> float:
        return math.fsum(a.mass for a in self.atoms)

    @property
    def intervals(self) -> list[Interval]:
        return [a.interval for a in self.atoms]

    def scaled(self, c: float) -> "PiecewiseMeasure":
        return PiecewiseMeasure(tuple(Atom(a.interval, a.density, a.weight * c) for a in self.atoms))

    def normalized(self) -> "PiecewiseMeasure":
        m = self.total_mass
        if m <= 0:
            raise ValueError("cannot normalise a measure of zero mass")
        atoms = tuple(Atom(a.interval, a.density, a.weight / m) for a in self.atoms)
        out = PiecewiseMeasure(atoms, disjoint=self.disjoint)
        return PiecewiseMeasure(out.atoms, probability=abs(out.total_mass - 1.0) <= 1e-9,
                                disjoint=self.disjoint)

    def all_constant(self) -> bool:
        return all(a.density.is_constant for a in self.atoms)

    def key(self) -> tuple:
        return tuple(a.key() for a in self.atoms)

    def _sorted_constant(self):
        """(lo, hi, log density) sorted by lo for disjoint constant atoms, else None."""
        if not self.all_constant():
            return None
        cached = self.__dict__.get("_lookup")
        if cached is not None:
            return cached
        rows = []
        for a in self.atoms:
            if a.weight == 0.0 or a.density.value == 0.0:
                continue
            lo, hi = a.interval.endpoints()
            eff = a.interval.effective()
            rows.append((lo, hi, math.log(a.weight * a.density.value) - eff.loglen))
        arr = np.array(rows, dtype=float).reshape(-1, 3)
        arr = arr[np.argsort(arr[:, 0], kind="stable")]
        if np.any(arr[1:, 0] < arr[:-1, 1]):
            return None
        out = (arr[:, 0], arr[:, 1], arr[:, 2])
        object.__setattr__(self, "_lookup", out)
        return out

    def log_density_at(self, x) -> np.ndarray:
        """log of the density (w.r.t. dx) at points ``x``; -inf outside the support."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.full(x.shape, -np.inf)
        fast = self._sorted_constant()
        if fast is not None:
            lo, hi, ld = fast
            pos = np.searchsorted(lo, x, side="right") - 1
            ok = pos >= 0
            ok[ok] = x[ok] <= hi[pos[ok]]
            out[ok] = ld[pos[ok]]
            return out
        for a in self.atoms:
            lo, hi = a.interval.endpoints()
            inside = (x >= lo) & (x <= hi)
            if not inside.any() or a.weight == 0.0:
                continue
            eff = a.interval.effective()
            t = (x[inside] - lo) / (hi - lo) if hi > lo else np.full(inside.sum(), 0.5)
            with np.errstate(divide="ignore"):
                val = math.log(a.weight) + np.log(a.density(t)) - eff.loglen
            out[inside] = np.logaddexp(out[inside], val)
        return out


@dataclass(frozen=True)
class EnergyBreakdown:
    """Self/outer decomposition of an energy.

    ``cells`` (optional) holds per-block contributions whose sum is ``total``;
    ``far_field_bound`` is the summed certificate for pairs evaluated by the
    far-field approximation.
    """

    self_sum: float
    outer_sum: float
    normalization: float
    total: float
    far_field_bound: float = 0.0
    cells: tuple | None = None

    @property
    def normalized_total(self) -> float:
        return self.total / (self.normalization * self.normalization)


def find_overlap(intervals: Sequence[Interval]):
    """Indices of one pair of overlapping, non-identical intervals, or None."""
    if len(intervals) < 2:
        return None
    lo = np.array([iv.endpoints()[0] for iv in intervals])
    hi = np.array([iv.endpoints()[1] for iv in intervals])
    order = np.lexsort((hi, lo))
    prev = order[0]
    reach_idx = prev
    for idx in order[1:]:
        same = lo[idx] == lo[reach_idx] and hi[idx] == hi[reach_idx]
        if lo[idx] < hi[reach_idx] and not same:
            return int(min(reach_idx, idx)), int(max(reach_idx, idx))
        if hi[idx] > hi[reach_idx]:
            reach_idx = idx
    return None


def _identical(a: Interval, b: Interval) -> bool:
    return a.center == b.center and a.loglen == b.loglen


def self_energy_uniform(a: Interval) -> float:
    """Energy of the unit-mass uniform measure on ``a``: ``-loglen + C0``."""
    if not math.isfinite(a.loglen):
        raise ValueError("loglen must be finite")
    return -a.effective().loglen + SELF_ENERGY_UNIT


def pair_interaction_closed_form(a: Interval, da: DensitySpec, b: Interval, db: DensitySpec) -> float:
    """I(mu_a, mu_b) for constant densities on disjoint or identical intervals."""
    if not (da.is_constant and db.is_constant):
        raise ValueError("closed form needs constant densities; use interaction_quadrature")
    if _identical(a, b):
        return da.value * db.value * self_energy_uniform(a)
    ea, eb = a.effective(), b.effective()
    if a.overlaps(b):
        raise PartialOverlapError(f"intervals {a} and {b} overlap; split them first")
    e = uniform_pair_energy(abs(ea.center - eb.center), ea.half, eb.half)
    return da.value * db.value * float(e)


def interaction_quadrature(a: Interval, da: DensitySpec, b: Interval, db: DensitySpec,
                           tol: float = 1e-10, max_nodes: int = 10_000_000) -> float:
    """Adaptive quadrature of I(mu_a, mu_b) for piecewise-linear densities.

    The identical-interval case separates ``-loglen`` analytically and
    integrates the log singularity on the diagonal exactly panel by panel.
    Raises :class:`QuadratureBudgetError` (carrying the best estimate) when
    ``max_nodes`` is exceeded.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if da.mean() == 0.0 or db.mean() == 0.0:
        if (da.is_constant or not np.any(da.ordinates)) or (db.is_constant or not np.any(db.ordinates)):
            return 0.0
    if _identical(a, b):
        eff = a.effective()
        if da.is_constant and db.is_constant:
            return da.value * db.value * (-eff.loglen + SELF_ENERGY_UNIT)
        na = 2 if da.is_constant else len(da.ordinates)
        nb = 2 if db.is_constant else len(db.ordinates)
        if na == nb or da.is_constant or db.is_constant:
            pts = max(na, nb)
            ref = toeplitz_self(da.as_ordinates(pts), db.as_ordinates(pts))
        else:
            edges = np.union1d(np.linspace(0, 1, na), np.linspace(0, 1, nb))
            pa = panels_from_grid(da(edges), edges)
            pb = panels_from_grid(db(edges), edges)
            ref = panel_interaction(pa, pb, 0.0, 1.0, 1.0, tol, max_nodes)
        return -eff.loglen * da.mean() * db.mean() + ref
    if a.overlaps(b):
        raise PartialOverlapError(f"intervals {a} and {b} overlap; split them first")
    ea, eb = a.effective(), b.effective()
    pa = _panels(da)
    pb = _panels(db)
    return panel_interaction(pa, pb, eb.center - ea.center, ea.length, eb.length, tol, max_nodes)


def _panels(d: DensitySpec):
    if d.is_constant:
        edges = np.array([0.0, 1.0])
        return panels_from_grid(np.array([d.value, d.value]), edges)
    edges = d.grid()
    return panels_from_grid(d.ordinates, edges)


def farfield_interaction(a: Interval, fa: float, b: Interval, fb: float,
                         sup_norm: float | None = None) -> tuple[float, float]:
    """Centre-point approximation of I(mu_a, mu_b) with its error certificate.

    ``value = -log|c_a - c_b| * fa * fb``; the exact interaction differs from it
    by at most ``(2K(-log|c_a - c_b|) + K^2) * eps`` where
    ``eps = -log(1 - (r_a + r_b) / (2|c_a - c_b|))``.
    """
    ea, eb = a.effective(), b.effective()
    dist = abs(ea.center - eb.center)
    if dist == 0.0:
        raise SingularPairError("coincident centres in far-field evaluation", (a, b))
    ratio = (ea.length + eb.length) / (2.0 * dist)
    if ratio >= 1.0:
        raise ValueError(f"far-field condition violated: ratio {ratio!r} >= 1")
    eps = -math.log1p(-ratio)
    k = max(abs(fa), abs(fb), sup_norm or 0.0)
    ld = -math.log(dist)
    return ld * fa * fb, (2.0 * k * ld + k * k) * eps


# ---------------------------------------------------------------------------
# measure-level sums


@dataclass
class FlatAtoms:
    """Array view of constant-density atoms (effective geometry)."""

    center: np.ndarray
    loglen: np.ndarray
    mass: np.ndarray

    @property
    def half(self) -> np.ndarray:
        return 0.5 * np.exp(self.loglen)

    def __len__(self) -> int:
        return self.center.size


def flatten(mu: PiecewiseMeasure) -> FlatAtoms:
    n = len(mu.atoms)
    c = np.empty(n)
    ll = np.empty(n)
    m = np.empty(n)
    for i, a in enumerate(mu.atoms):
        e = a.interval.effective()
        c[i] = e.center
        ll[i] = e.loglen
        m[i] = a.mass
    return FlatAtoms(c, ll, m)


def _block_values(ci, lli, hi, mi, cj, llj, hj, mj, tol_pair, keep=None):
    """Mass-weighted pair energies for one block; returns (values, certificate sum).

    Entries outside ``keep`` (when given) are zero and excluded from the certificate.
    """
    dist = np.abs(ci[:, None] - cj[None, :])
    mm = mi[:, None] * mj[None, :]
    zero = dist == 0.0
    any_zero = bool(zero.any())
    if any_zero:
        same = zero & (lli[:, None] == llj[None, :])
        if not np.array_equal(same, zero):
            i, j = np.argwhere(zero & ~same)[0]
            raise SingularPairError("distinct atoms share a centre", (int(i), int(j)))
        dist = np.where(zero, 1.0, dist)
    hs = hi[:, None] + hj[None, :]
    ld = -np.log(dist)
    r = hs / dist
    if np.any(hs - dist > 1e-9 * hs + _OVERLAP_ABS):
        raise PartialOverlapError("atoms overlap; split the measure first")
    # (2K|log d| + K^2) eps with K = 1 per unit-mass piece, eps <= r / (1 - r)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = mm * (2.0 * np.abs(ld) + 1.0) * (r / (1.0 - r))
    ff = (bound <= tol_pair) & (r < 1.0)
    vals = mm * ld
    if keep is not None:
        ff &= keep
        vals = np.where(keep, vals, 0.0)
        ex = ~ff & keep
    else:
        ex = ~ff
    if any_zero:
        ff &= ~zero
        ex &= ~zero
    bsum = float(np.sum(bound[ff])) if ff.any() else 0.0
    if ex.any():
        hb_i = np.broadcast_to(hi[:, None], dist.shape)[ex]
        hb_j = np.broadcast_to(hj[None, :], dist.shape)[ex]
        vals[ex] = mm[ex] * uniform_pair_energy(dist[ex], hb_i, hb_j)
    if any_zero:
        if keep is not None:
            zero &= keep
        selfv = mm * (-np.broadcast_to(lli[:, None], dist.shape) + SELF_ENERGY_UNIT)
        vals[zero] = selfv[zero]
    return vals, bsum


_ROWS = _BLOCK
_COLS = 4096


def _segment_ids(bounds: np.ndarray, n: int) -> np.ndarray:
    ids = np.zeros(n, dtype=np.intp)
    if bounds.size > 1:
        ids[bounds[1:]] = 1
        ids = np.cumsum(ids)
    return ids


def pair_cells(fa: FlatAtoms, fb: FlatAtoms | None, tol_pair: float, bounds_a=None, bounds_b=None,
               threads: int = 1):
    """Sum of pair energies aggregated into label cells.

    With ``fb`` None the sum runs over pairs i < j of ``fa`` (each unordered
    pair once) and labels come from ``bounds_a`` for both sides.  Labels are
    contiguous index segments starting at ``bounds``.  Returns the cell
    matrix (rows: label of the first index) and the far-field certificate
    sum.  Reduction order is fixed by the block layout, not by ``threads``.
    """
    tri = fb is None
    if tri:
        fb = fa
        bounds_b = bounds_a
    na, nb = len(fa), len(fb)
    ba = np.array([0] if bounds_a is None else bounds_a, dtype=np.intp)
    bb = np.array([0] if bounds_b is None else bounds_b, dtype=np.intp)
    ida = _segment_ids(ba, na)
    idb = _segment_ids(bb, nb)
    la, lb = ba.size, bb.size
    ha, hb = fa.half, fb.half

    def work(s):
        e = min(s + _ROWS, na)
        cells = np.zeros((la, lb))
        bsum = 0.0
        j_start = s if tri else 0
        for c0 in range(j_start, nb, _COLS):
            c1 = min(c0 + _COLS, nb)
            keep = None
            if tri and c0 < e:
                keep = np.arange(c0, c1)[None, :] > np.arange(s, e)[:, None]
            vals, b = _block_values(fa.center[s:e], fa.loglen[s:e], ha[s:e], fa.mass[s:e],
                                    fb.center[c0:c1], fb.loglen[c0:c1], hb[c0:c1], fb.mass[c0:c1],
                                    tol_pair, keep)
            bsum += b
            _accumulate(cells, vals, ida[s:e], idb[c0:c1])
        return cells, bsum

    starts = list(range(0, na, _ROWS))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]
    cells = np.zeros((la, lb))
    bsum = 0.0
    for c, b in results:
        cells += c
        bsum += b
    return cells, bsum


def _runs(labels: np.ndarray):
    starts = np.flatnonzero(np.r_[True, labels[1:] != labels[:-1]])
    return starts, labels[starts]


def _accumulate(cells, vals, row_lab, col_lab):
    cs, cl = _runs(col_lab)
    per_col = np.add.reduceat(vals, cs, axis=1)
    rs, rl = _runs(row_lab)
    block = np.add.reduceat(per_col, rs, axis=0)
    cells[np.ix_(rl, cl)] += block


def self_terms(fa: FlatAtoms) -> np.ndarray:
    return fa.mass * fa.mass * (-fa.loglen + SELF_ENERGY_UNIT)


def labelled_energy(fa: FlatAtoms, bounds=None, tol: float = 1e-10, threads: int = 1):
    """Energy of a constant-density atom family with per-label cells.

    Returns ``(breakdown, cells)`` where ``cells[a, b]`` is the interaction
    between the parts labelled ``a`` and ``b`` (self terms on the diagonal)
    and ``cells.sum()`` equals ``breakdown.total`` up to rounding.
    """
    n = len(fa)
    ba = np.array([0] if bounds is None else bounds, dtype=np.intp)
    ids = _segment_ids(ba, n)
    st = self_terms(fa)
    self_by_label = np.zeros(ba.size)
    np.add.at(self_by_label, ids, st)
    self_sum = float(np.sum(st))
    if n < 2:
        cells = np.diag(self_by_label)
        return EnergyBreakdown(self_sum, 0.0, float(np.sum(fa.mass)), self_sum, 0.0, None), cells
    npairs = n * (n - 1) / 2.0
    upper, bsum = pair_cells(fa, None, tol / (2.0 * npairs), ba, None, threads)
    outer_cells = upper + upper.T
    outer = float(np.sum(outer_cells))
    cells = outer_cells + np.diag(self_by_label)
    br = EnergyBreakdown(self_sum, outer, float(np.sum(fa.mass)), self_sum + outer, 2.0 * bsum)
    return br, cells


def _atom_pair(a: Atom, b: Atom, tol: float) -> float:
    if a.weight == 0.0 or b.weight == 0.0:
        return 0.0
    if a.density.is_constant and b.density.is_constant:
        return a.weight * b.weight * pair_interaction_closed_form(a.interval, a.density, b.interval, b.density)
    return a.weight * b.weight * interaction_quadrature(a.interval, a.density, b.interval, b.density, tol)


def measure_energy(mu: PiecewiseMeasure, tol: float = 1e-10, threads: int = 1) -> EnergyBreakdown:
    """Energy I(mu) split into per-atom self energies and distinct-pair interactions.

    Pairs whose far-field certificate is below ``tol`` (shared over all
    pairs) use the centre-point value; others use the closed form or, for
    non-constant densities, quadrature.  Summation order is fixed.
    """
    if len(mu.atoms) == 0:
        return EnergyBreakdown(0.0, 0.0, 0.0, 0.0)
    if mu.all_constant():
        br, _ = labelled_energy(flatten(mu), None, tol, threads)
        return EnergyBreakdown(br.self_sum, br.outer_sum, mu.total_mass, br.total, br.far_field_bound)
    atoms = mu.atoms
    n = len(atoms)
    local = tol / max(1, n * n)
    self_sum = math.fsum(_atom_pair(a, a, local) for a in atoms)
    outer_terms = [_atom_pair(atoms[i], atoms[j], local) for i, j in iter_pairs(n)]
    outer = 2.0 * float(np.sum(np.array(outer_terms))) if outer_terms else 0.0
    return EnergyBreakdown(self_sum, outer, mu.total_mass, self_sum + outer)


def mutual_energy(mu: PiecewiseMeasure, nu: PiecewiseMeasure, tol: float = 1e-10,
                  threads: int = 1) -> float:
    """I(mu, nu); the arguments are put in a canonical order so swapping is exact."""
    if mu.key() > nu.key():
        mu, nu = nu, mu
    if len(mu.atoms) == 0 or len(nu.atoms) == 0:
        return 0.0
    try:
        return _mutual(mu, nu, tol, threads)
    except (PartialOverlapError, SingularPairError):
        # cut both at the union of endpoints: pieces are then disjoint or identical
        pts = sorted({p for m in (mu, nu) for a in m.atoms for p in a.interval.endpoints()})
        return _mutual(_refine(mu, pts), _refine(nu, pts), tol, threads)


def _mutual(mu, nu, tol, threads):
    if mu.all_constant() and nu.all_constant():
        fa, fb = flatten(mu), flatten(nu)
        cells, _ = pair_cells(fa, fb, tol / (len(fa) * len(fb)), threads=threads)
        return float(cells[0, 0])
    local = tol / (len(mu.atoms) * len(nu.atoms))
    terms = [_atom_pair(a, b, local) for a in mu.atoms for b in nu.atoms]
    return float(np.sum(np.array(terms)))


def split_measure(mu: PiecewiseMeasure) -> PiecewiseMeasure:
    """Refine overlapping atoms at every endpoint so that pieces are disjoint or identical."""
    return _refine(mu, sorted({p for a in mu.atoms for p in a.interval.endpoints()}))


def _refine(mu: PiecewiseMeasure, pts) -> PiecewiseMeasure:
    atoms = []
    for a in mu.atoms:
        lo, hi = a.interval.endpoints()
        cuts = [p for p in pts if lo <= p <= hi]
        for x0, x1 in zip(cuts[:-1], cuts[1:]):
            if x1 <= x0:
                continue
            t0, t1 = (x0 - lo) / (hi - lo), (x1 - lo) / (hi - lo)
            atoms.append(Atom(Interval.from_endpoints(x0, x1), a.density.restrict(t0, t1),
                              a.weight * (t1 - t0)))
    return PiecewiseMeasure(tuple(atoms))


def iter_pairs(n: int) -> Iterable[tuple[int, int]]:
    for i in range(n):
        for j in range(i + 1, n):
            yield i, j
