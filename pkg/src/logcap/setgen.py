"""Length schedules, centre sequences, dyadic index blocks and level unions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernel import DensitySpec, Interval

log = logging.getLogger(__name__)

__all__ = [
    "CenterSequence",
    "DensityTable",
    "GDeltaApprox",
    "LengthSchedule",
    "LevelBlocks",
    "LevelUnion",
    "block",
    "block_union",
    "default_q",
    "level_union",
    "restrict_support",
    "sample_centers_iid",
    "uniform_grid_centers",
]

CHUNK = 4096
# endpoints are rebuilt from (centre, log length); allow a few ulps
_ENDPOINT_SLACK = 1e-15


@dataclass(frozen=True)
class LengthSchedule:
    """l_k = exp(-lam * k**alpha), handled through its logarithm."""

    lam: float
    alpha: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive, got {self.lam!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    def loglen(self, k) -> float:
        if int(k) != k or k < 1:
            raise ValueError(f"index k must be an integer >= 1, got {k!r}")
        return -self.lam * float(k) ** self.alpha

    def loglens(self, ks) -> np.ndarray:
        ks = np.asarray(ks)
        if ks.size and ks.min() < 1:
            raise ValueError("indices must be >= 1")
        return -self.lam * ks.astype(float) ** self.alpha

    def interval(self, center: float, k: int) -> Interval:
        return Interval(center, self.loglen(k))


def length(schedule: LengthSchedule, k: int) -> float:
    return schedule.loglen(k)


class DensityTable:
    """Piecewise-linear density on [0, 1] given by (grid, values)."""

    def __init__(self, grid, values, renormalize: bool = True):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValueError("grid and values must be 1-d arrays of equal length >= 2")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if abs(grid[0]) > 1e-12 or abs(grid[-1] - 1.0) > 1e-12:
            raise ValueError("grid must cover [0, 1]")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        if np.any(values < 0):
            raise ValueError("density values must be >= 0")
        grid = grid.copy()
        grid[0], grid[-1] = 0.0, 1.0
        mass = float(np.trapezoid(values, grid))
        if mass <= 0:
            raise ValueError("density has zero mass")
        if abs(mass - 1.0) > 1e-6:
            if not renormalize:
                raise ValueError(f"density integrates to {mass}, not 1")
            log.info("renormalising density table (mass %.6g)", mass)
        if renormalize:
            values = values / mass
        self.grid = grid
        self.values = values
        seg = 0.5 * (values[1:] + values[:-1]) * np.diff(grid)
        self._cdf = np.concatenate([[0.0], np.cumsum(seg)])
        self._cdf /= self._cdf[-1]
        # zero on a region of positive length: allowed, but worth flagging
        zero_seg = (values[1:] == 0) & (values[:-1] == 0)
        self.zero_measure = float(np.sum(np.diff(grid)[zero_seg]))

    @classmethod
    def uniform(cls) -> "DensityTable":
        return cls([0.0, 1.0], [1.0, 1.0])

    @classmethod
    def from_function(cls, func, points: int = 1025) -> "DensityTable":
        x = np.linspace(0.0, 1.0, points)
        return cls(x, func(x))

    @classmethod
    def from_file(cls, path) -> "DensityTable":
        data = np.loadtxt(Path(path), ndmin=2, delimiter=None)
        if data.shape[1] != 2:
            raise ValueError(f"{path}: expected two columns (grid, density)")
        return cls(data[:, 0], data[:, 1])

    def to_file(self, path):
        np.savetxt(path, np.column_stack([self.grid, self.values]), fmt="%.17g")

    @property
    def sup(self) -> float:
        return float(self.values.max())

    @property
    def inf(self) -> float:
        return float(self.values.min())

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def __call__(self, x):
        return np.interp(x, self.grid, self.values)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        i = np.clip(np.searchsorted(self.grid, x, side="right") - 1, 0, self.grid.size - 2)
        x0 = self.grid[i]
        h = self.grid[i + 1] - x0
        v0 = self.values[i]
        slope = (self.values[i + 1] - v0) / h
        t = x - x0
        return self._cdf[i] + v0 * t + 0.5 * slope * t * t

    def ppf(self, u):
        """Exact inverse of the piecewise-quadratic CDF."""
        u = np.asarray(u, dtype=float)
        i = np.clip(np.searchsorted(self._cdf, u, side="right") - 1, 0, self.grid.size - 2)
        x0 = self.grid[i]
        h = self.grid[i + 1] - x0
        v0 = self.values[i]
        slope = (self.values[i + 1] - v0) / h
        r = u - self._cdf[i]
        # 0.5 slope t^2 + v0 t - r = 0, stable root
        disc = np.sqrt(np.maximum(v0 * v0 + 2.0 * slope * r, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(v0 + disc > 0, 2.0 * r / (v0 + disc), 0.0)
        return x0 + np.clip(t, 0.0, h)

    def expect(self, func, points: int = 4097) -> float:
        """Integral of func * phi over [0, 1] (composite Simpson on a refined grid)."""
        from scipy.integrate import simpson

        x = np.union1d(self.grid, np.linspace(0.0, 1.0, points))
        return float(simpson(np.asarray(func(x), dtype=float) * self(x), x=x))

    def to_density_spec(self, points: int | None = None) -> DensitySpec:
        if self.is_uniform:
            return DensitySpec.constant(float(self.values[0]))
        if points is None:
            uniform_grid = np.allclose(self.grid, np.linspace(0.0, 1.0, self.grid.size), rtol=0, atol=1e-14)
            if uniform_grid:
                return DensitySpec.sampled(self.values)
            points = 4097
        return DensitySpec.sampled(self(np.linspace(0.0, 1.0, points)))


class CenterSequence:
    """Centres c_1, c_2, ... (1-based) of one of three kinds.

    ``iid`` draws chunk j of ``CHUNK`` centres from ``default_rng([seed, j])``
    so any prefix is the same regardless of how it was requested.
    ``uniform_grid`` flattens the rows (2j+1)/(2n), j < n, for n = 1, 2, ...
    """

    def __init__(self, kind: str, table: DensityTable | None = None, seed: int | None = None,
                 values=None):
        if kind not in ("iid", "uniform_grid", "explicit"):
            raise ValueError(f"unknown centre sequence kind {kind!r}")
        self.kind = kind
        self.table = table
        self.seed = seed
        self._cache = np.zeros(0)
        self._seen: set[float] = set()
        self.nudged = 0
        if kind == "iid":
            if table is None or seed is None:
                raise ValueError("iid sequences need a density table and a seed")
        elif kind == "explicit":
            vals = np.asarray(values, dtype=float)
            if vals.ndim != 1:
                raise ValueError("explicit centres must be a 1-d list")
            if np.any((vals <= 0) | (vals >= 1)):
                raise ValueError("explicit centres must lie in (0, 1)")
            self._cache = vals.copy()
            self._cache.setflags(write=False)

    @classmethod
    def explicit(cls, values) -> "CenterSequence":
        return cls("explicit", values=values)

    @classmethod
    def uniform_grid(cls) -> "CenterSequence":
        return cls("uniform_grid")

    @classmethod
    def iid(cls, table: DensityTable, seed: int) -> "CenterSequence":
        return cls("iid", table=table, seed=seed)

    def __len__(self) -> int:
        return self._cache.size

    def _chunk(self, j: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, j])
        u = rng.random(CHUNK)
        x = self.table.ppf(u)
        tiny = np.nextafter(0.0, 1.0)
        return np.clip(x, tiny, np.nextafter(1.0, 0.0))

    def _dedupe(self, new: np.ndarray) -> np.ndarray:
        out = new.copy()
        for i, x in enumerate(out):
            if x in self._seen:
                y = x
                while y in self._seen:
                    y = np.nextafter(y, 1.0 if y < 0.5 else 0.0)
                log.warning("coincident centre %r nudged to %r", float(x), float(y))
                self.nudged += 1
                out[i] = y
            self._seen.add(float(out[i]))
        return out

    def ensure(self, count: int):
        if count <= self._cache.size:
            return
        if self.kind == "explicit":
            raise IndexError(f"explicit sequence has {self._cache.size} centres, {count} needed")
        if self.kind == "uniform_grid":
            rows = int(math.ceil((math.sqrt(8 * count + 1) - 1) / 2))
            self._cache = np.concatenate([uniform_grid_centers(n) for n in range(1, rows + 1)])
            return
        have = self._cache.size // CHUNK
        need = -(-count // CHUNK)
        parts = [self._cache]
        for j in range(have, need):
            parts.append(self._dedupe(self._chunk(j)))
        self._cache = np.concatenate(parts)

    def __getitem__(self, k: int) -> float:
        if k < 1:
            raise IndexError("centres are indexed from 1")
        self.ensure(k)
        return float(self._cache[k - 1])

    def take(self, lo: int, hi: int) -> np.ndarray:
        """Centres c_lo, ..., c_{hi-1}."""
        if lo < 1:
            raise IndexError("centres are indexed from 1")
        self.ensure(hi - 1)
        return self._cache[lo - 1:hi - 1]

    def prefix(self, count: int) -> np.ndarray:
        return self.take(1, count + 1)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "iid":
            d["seed"] = self.seed
            d["uniform_density"] = self.table.is_uniform
        return d


def sample_centers_iid(table: DensityTable, seed: int, count: int) -> CenterSequence:
    seq = CenterSequence.iid(table, seed)
    seq.ensure(count)
    return seq


def uniform_grid_centers(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return (2.0 * np.arange(n) + 1.0) / (2.0 * n)


def default_q(n: int) -> int:
    """max(1, floor(log2(ln n)))."""
    if n < 2:
        raise ValueError("default_q needs n >= 2")
    return max(1, int(math.floor(math.log2(math.log(n)))))


def block(n: int) -> range:
    """A_n = {n, ..., 2n-1}."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return range(n, 2 * n)


def block_union(n: int, q: int) -> range:
    """A_{n,q} = A_n ∪ A_{2n} ∪ ... ∪ A_{2^q n}, which is the range n .. 2^{q+1} n - 1."""
    if q < 0:
        raise ValueError("q must be >= 0")
    return range(n, (2 ** (q + 1)) * n)


@dataclass(frozen=True)
class LevelBlocks:
    n: int
    q: int

    def __post_init__(self):
        if self.n < 1 or self.q < 0:
            raise ValueError("need n >= 1 and q >= 0")

    @property
    def levels(self) -> list[int]:
        """n, 2n, ..., 2^q n."""
        return [self.n * 2 ** s for s in range(self.q + 1)]

    @property
    def a_n(self) -> range:
        return block(self.n)

    @property
    def a_nq(self) -> range:
        return block_union(self.n, self.q)

    @property
    def b_m(self) -> range:
        """B_m = {0, ..., q-1}."""
        return range(self.q)

    def blocks(self) -> list[range]:
        return [block(k) for k in self.levels]


@dataclass
class LevelUnion:
    """The intervals I_k, k in A_n (array form plus overlap diagnostics)."""

    n: int
    indices: np.ndarray
    centers: np.ndarray
    loglens: np.ndarray
    overlaps: list = field(default_factory=list)
    clipped: int = 0

    @property
    def disjoint(self) -> bool:
        return not self.overlaps

    @property
    def intervals(self) -> list[Interval]:
        return [Interval(float(c), float(l)) for c, l in zip(self.centers, self.loglens)]

    def __len__(self) -> int:
        return self.indices.size


def endpoints(centers: np.ndarray, loglens: np.ndarray):
    half = 0.5 * np.exp(loglens)
    return np.maximum(centers - half, 0.0), np.minimum(centers + half, 1.0)


def find_overlaps(centers: np.ndarray, loglens: np.ndarray, limit: int = 10) -> list[tuple[int, int]]:
    """Positions of overlapping pairs (sweep over left endpoints); coincident centres count."""
    lo, hi = endpoints(centers, loglens)
    order = np.lexsort((hi, lo))
    out = []
    reach = order[0] if order.size else None
    for idx in order[1:]:
        if lo[idx] < hi[reach] or centers[idx] == centers[reach]:
            out.append((int(min(reach, idx)), int(max(reach, idx))))
            if len(out) >= limit:
                break
        if hi[idx] > hi[reach]:
            reach = idx
    return out


def level_union(schedule: LengthSchedule, centers: CenterSequence, n: int) -> LevelUnion:
    idx = np.arange(n, 2 * n)
    c = centers.take(n, 2 * n).copy()
    ll = schedule.loglens(idx)
    half = 0.5 * np.exp(ll)
    clipped = int(np.sum((c - half < 0.0) | (c + half > 1.0)))
    if clipped:
        log.info("level %d: %d intervals clipped to [0,1]", n, clipped)
    pairs = find_overlaps(c, ll)
    overlaps = [(int(idx[i]), int(idx[j])) for i, j in pairs]
    if overlaps:
        log.info("level %d: overlapping intervals, first pair %s", n, overlaps[0])
    return LevelUnion(n, idx, c, ll, overlaps, clipped)


def restrict_support(support, V):
    """Intervals of ``V`` wholly inside some support interval, and the straddler count.

    Both arguments are lists of :class:`Interval` (or ``(lo, hi)`` pairs).
    """
    kept_mask, straddlers = containment(_as_pairs(support), _as_pairs(V))
    kept = [v for v, k in zip(V, kept_mask) if k]
    return kept, straddlers


def _as_pairs(items):
    if len(items) == 0:
        return np.zeros((0, 2))
    if isinstance(items[0], Interval):
        return np.array([iv.endpoints() for iv in items])
    return np.asarray(items, dtype=float).reshape(-1, 2)


def containment(support: np.ndarray, v: np.ndarray):
    """Mask of rows of ``v`` contained in a row of ``support``; number of straddlers."""
    if v.shape[0] == 0:
        return np.zeros(0, dtype=bool), 0
    if support.shape[0] == 0:
        return np.zeros(v.shape[0], dtype=bool), 0
    order = np.argsort(support[:, 0], kind="stable")
    s_lo, s_hi = support[order, 0], support[order, 1]
    pos = np.searchsorted(s_lo, v[:, 0] + _ENDPOINT_SLACK, side="right") - 1
    ok = pos >= 0
    inside = np.zeros(v.shape[0], dtype=bool)
    inside[ok] = v[ok, 1] <= s_hi[pos[ok]] + _ENDPOINT_SLACK
    # straddler: meets some support interval without being inside one
    first = np.searchsorted(s_hi, v[:, 0] + _ENDPOINT_SLACK, side="right")
    last = np.searchsorted(s_lo, v[:, 1] - _ENDPOINT_SLACK, side="left")
    meets = last > first
    straddle = meets & ~inside
    return inside, int(np.sum(straddle))


class GDeltaApprox:
    """Finite-stage approximation C_m = V_{n_1} ∩ ... ∩ V_{n_m} under the containment rule."""

    def __init__(self, schedule: LengthSchedule, centers: CenterSequence):
        self.schedule = schedule
        self.centers = centers
        self.stages: list[range] = []
        self.current_support: list[Interval] = [Interval(0.5, 0.0)]
        self.discarded: list[int] = []

    def advance(self, n: int) -> list[Interval]:
        vn = level_union(self.schedule, self.centers, n)
        if not vn.disjoint:
            raise ValueError(f"level {n} intervals overlap: {vn.overlaps[0]}")
        kept, stray = restrict_support(self.current_support, vn.intervals)
        self.stages.append(block(n))
        self.discarded.append(stray)
        self.current_support = kept
        return kept
