"""Finite-scale audits of the distribution, log-spacing and gap-control assumptions.

The deterministic checks look at one centre sequence; the Monte-Carlo
routines redraw centres per trial from ``default_rng([seed, trial])``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .kernel import SingularPairError
from .setgen import CenterSequence, DensityTable, LengthSchedule, default_q

log = logging.getLogger(__name__)

__all__ = [
    "AuditReport",
    "InsufficientDataError",
    "TailStats",
    "audit",
    "check_distribution",
    "check_gap_control",
    "check_log_spacing",
    "default_test_functions",
    "gap_tail_bound",
    "montecarlo_fourth_moment",
    "montecarlo_gap_tail",
    "truncated_log_kernel",
]

DELTA_GRID = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
EPS_LOG_SPACING = 0.05
EPS_GAP = 0.5


class InsufficientDataError(ValueError):
    pass


def default_test_functions():
    return {
        "1": lambda x: np.ones_like(x),
        "x": lambda x: x,
        "x^2": lambda x: x * x,
        "cos2pix": lambda x: np.cos(2 * np.pi * x),
        "sin2pix": lambda x: np.sin(2 * np.pi * x),
    }


@dataclass
class AuditReport:
    """Per-assumption statistics, thresholds and verdicts."""

    a1: dict = field(default_factory=dict)
    a2: dict = field(default_factory=dict)
    a3: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


@dataclass
class TailStats:
    trials: int
    violation_count: int
    bound_value: float
    fourth_moment_sums: dict | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.violation_count <= self.trials:
            raise ValueError("violation_count must lie in [0, trials]")

    @property
    def frequency(self) -> float:
        return self.violation_count / self.trials

    @property
    def vacuous(self) -> bool:
        return self.bound_value >= 1.0


def _dyadic(n_max: int) -> list[int]:
    ns = []
    k = 1
    while k < n_max:
        ns.append(k)
        k *= 2
    ns.append(n_max)
    return ns


def _centers_upto(centers, count: int) -> np.ndarray:
    if isinstance(centers, CenterSequence):
        if centers.kind == "explicit" and len(centers) < count:
            raise InsufficientDataError(f"need {count} centres, sequence has {len(centers)}")
        return centers.prefix(count)
    arr = np.asarray(centers, dtype=float)
    if arr.size < count:
        raise InsufficientDataError(f"need {count} centres, got {arr.size}")
    return arr[:count]


# ---------------------------------------------------------------------------
# A.1


def check_distribution(centers, n_max: int, functions: dict | None = None, table: DensityTable | None = None,
                       targets: dict | None = None, threshold: float | None = None) -> dict:
    """Block averages over A_n against their limits, for n = 1, 2, 4, ..., n_max."""
    if functions is None:
        functions = default_test_functions()
    if table is None:
        table = DensityTable.uniform()
    c = _centers_upto(centers, 2 * n_max - 1)
    if targets is None:
        targets = {name: table.expect(f) for name, f in functions.items()}
    if threshold is None:
        threshold = 5.0 / math.sqrt(n_max)
    trace = []
    for n in _dyadic(n_max):
        blk = c[n - 1:2 * n - 1]
        devs = {name: abs(float(np.mean(f(blk))) - targets[name]) for name, f in functions.items()}
        worst = max(devs, key=devs.get)
        trace.append((n, devs[worst], worst))
    ns = np.array([t[0] for t in trace], dtype=float)
    dev = np.array([t[1] for t in trace])
    slope = float(np.polyfit(np.log2(ns), dev, 1)[0]) if ns.size > 1 else 0.0
    final = float(dev[-1])
    return {
        "functions": list(functions),
        "targets": dict(targets),
        "trace": trace,
        "max_deviation": final,
        "threshold": threshold,
        "trend_slope": slope,
        "passed": bool(final < threshold and slope <= 1e-12),
    }


# ---------------------------------------------------------------------------
# A.2


def _close_pair_sums(values: np.ndarray, labels: np.ndarray, nlab: int, deltas, on_singular: str):
    """Σ -log|x_i - x_j| over unordered pairs with |x_i - x_j| < delta, per label pair and delta.

    Returns an array (len(deltas), nlab, nlab) (upper and lower triangles filled).
    """
    order = np.argsort(values, kind="stable")
    s = values[order]
    lab = labels[order]
    dgrid = np.sort(np.asarray(deltas, dtype=float))
    dmax = dgrid[-1]
    nd = dgrid.size
    out = np.zeros(nd * nlab * nlab)
    n = s.size
    # largest offset needed: how far a window of width dmax reaches
    reach = np.searchsorted(s, s + dmax, side="left") - np.arange(n)
    max_off = int(reach.max()) if n else 0
    batch = max(1, 4_000_000 // max(n, 1))
    singular = None
    for t0 in range(1, max_off + 1, batch):
        t1 = min(t0 + batch, max_off + 1)
        offs = np.arange(t0, t1)
        i = np.arange(n)[None, :]
        j = i + offs[:, None]
        valid = j < n
        jj = np.where(valid, j, 0)
        d = s[jj] - s[i]
        sel = valid & (d < dmax)
        if not sel.any():
            continue
        dv = d[sel]
        if np.any(dv == 0.0):
            pos = np.argwhere(sel)[np.flatnonzero(dv == 0.0)[0]]
            a, b = int(order[pos[1]]), int(order[jj[pos[0], pos[1]]])
            if on_singular == "raise":
                raise SingularPairError(f"coincident centres at positions {a} and {b}", (a, b))
            singular = singular or (a, b)
        la = np.broadcast_to(lab[None, :], sel.shape)[sel]
        lb = lab[jj[sel]]
        # bin index: delta slots strictly above d
        first = np.searchsorted(dgrid, dv, side="right")
        with np.errstate(divide="ignore"):
            w = -np.log(dv)
        cell = la * nlab + lb
        key = first * nlab * nlab + cell
        keep = first < nd
        out += np.bincount(key[keep], weights=w[keep], minlength=nd * nlab * nlab)
    sums = np.cumsum(out.reshape(nd, nlab, nlab), axis=0)
    sums = sums + np.transpose(sums, (0, 2, 1))
    return dgrid, sums, singular


def check_log_spacing(centers, n: int, q: int | None = None, deltas=DELTA_GRID, eps: float = EPS_LOG_SPACING,
                      on_singular: str = "raise") -> dict:
    """Truncated log-averages over A_{n'} x A_{n''} for n', n'' in {n, ..., 2^q n}.

    ``on_singular='inf'`` turns coincident centres into infinite sums
    instead of raising.
    """
    if q is None:
        q = default_q(max(n, 2))
    levels = [n * 2 ** s for s in range(q + 1)]
    total = 2 * levels[-1] - 1
    c = _centers_upto(centers, total)
    idx = np.arange(n, 2 * levels[-1])
    vals = c[idx - 1]
    labels = np.floor(np.log2(idx // n)).astype(np.intp)
    sv = np.sort(vals)
    dup = np.flatnonzero(np.diff(sv) == 0.0)
    if dup.size:
        # a coincident pair makes its cell infinite for every delta
        order = np.argsort(vals, kind="stable")
        a, b = int(order[dup[0]]), int(order[dup[0] + 1])
        if on_singular == "raise":
            raise SingularPairError(f"coincident centres c_{idx[a]} and c_{idx[b]}", (int(idx[a]), int(idx[b])))
        dgrid = np.sort(np.asarray(deltas, dtype=float))
        sums = np.full((dgrid.size, len(levels), len(levels)), np.nan)
        sums[:, labels[a], labels[b]] = np.inf
        sums[:, labels[b], labels[a]] = np.inf
        singular = (a, b)
    else:
        dgrid, sums, singular = _close_pair_sums(vals, labels, len(levels), deltas, on_singular)
    norm = np.outer(levels, levels).astype(float)
    avg = sums / norm[None, :, :]
    worst = np.nanmax(avg, axis=(1, 2))
    table = {float(d): avg[k].tolist() for k, d in enumerate(dgrid)}
    ok = [float(d) for d, w in zip(dgrid, worst) if w < eps]
    return {
        "levels": levels,
        "q": q,
        "deltas": [float(d) for d in dgrid],
        "averages": table,
        "worst_by_delta": {float(d): float(w) for d, w in zip(dgrid, worst)},
        "worst": float(worst.min()),
        "eps": eps,
        "passing_deltas": ok,
        "singular_pair": None if singular is None else (int(idx[singular[0]]), int(idx[singular[1]])),
        "passed": bool(ok),
    }


# ---------------------------------------------------------------------------
# A.3


def gap_ratio_max(c: np.ndarray, ll: np.ndarray, on_singular: str = "raise"):
    """log of max_{i != j} (l_i + l_j) / (2|c_i - c_j|) and the arg-max positions."""
    n = c.size
    if n < 2:
        return -np.inf, None
    order = np.argsort(c, kind="stable")
    s = c[order]
    sl = ll[order]
    gaps = np.diff(s)
    if np.any(gaps == 0.0):
        k = int(np.flatnonzero(gaps == 0.0)[0])
        pair = (int(order[k]), int(order[k + 1]))
        if on_singular == "raise":
            raise SingularPairError(f"coincident centres at positions {pair}", pair)
        return np.inf, pair
    # adjacent pairs give a lower bound r0 on the maximum
    adj = np.logaddexp(sl[1:], sl[:-1]) - math.log(2.0) - np.log(gaps)
    k = int(np.argmax(adj))
    best, pair = float(adj[k]), (int(order[k]), int(order[k + 1]))
    # any better pair must satisfy |c_i - c_j| < (l_i + l_max) / (2 r0)
    llmax = float(sl.max())
    width = np.exp(np.logaddexp(sl, llmax) - math.log(2.0) - best)
    hi = np.searchsorted(s, s + width, side="right")
    counts = hi - np.arange(n) - 1
    counts = np.maximum(counts, 0)
    cand = np.flatnonzero(counts > 1)
    chunk = 5_000_000
    ii_all = np.repeat(cand, counts[cand])
    if ii_all.size:
        starts = np.cumsum(counts[cand]) - counts[cand]
        jj_all = ii_all + 1 + (np.arange(ii_all.size) - np.repeat(starts, counts[cand]))
        for a in range(0, ii_all.size, chunk):
            ii = ii_all[a:a + chunk]
            jj = jj_all[a:a + chunk]
            lr = np.logaddexp(sl[ii], sl[jj]) - math.log(2.0) - np.log(s[jj] - s[ii])
            m = int(np.argmax(lr))
            if lr[m] > best:
                best = float(lr[m])
                pair = (int(order[ii[m]]), int(order[jj[m]]))
    return best, pair


def check_gap_control(schedule: LengthSchedule, centers, n: int, q: int | None = None, eps: float = EPS_GAP,
                      on_singular: str = "raise") -> dict:
    """Maximum of (l_i + l_j)/(2|c_i - c_j|) over i != j in A_{n,q}, in log domain."""
    if q is None:
        q = default_q(max(n, 2))
    top = 2 ** (q + 1) * n
    c = _centers_upto(centers, top - 1)
    idx = np.arange(n, top)
    lr, pair = gap_ratio_max(c[idx - 1], schedule.loglens(idx), on_singular)
    worst = None if pair is None else tuple(sorted((int(idx[pair[0]]), int(idx[pair[1]]))))
    return {
        "n": n,
        "q": q,
        "indices": (n, top - 1),
        "log_max_ratio": lr,
        "max_ratio": math.exp(lr) if lr < 700 else math.inf,
        "worst_pair": worst,
        "eps": eps,
        "passed": bool(lr < math.log(eps)),
    }


def audit(schedule: LengthSchedule, centers, n: int, q: int | None = None, table: DensityTable | None = None,
          eps_log_spacing: float = EPS_LOG_SPACING, eps_gap: float = EPS_GAP, deltas=DELTA_GRID,
          functions: dict | None = None) -> AuditReport:
    """All three checks; coincident centres count as failures rather than errors."""
    if q is None:
        q = default_q(max(n, 2))
    a1 = check_distribution(centers, n, functions, table)
    a2 = check_log_spacing(centers, n, q, deltas, eps_log_spacing, on_singular="inf")
    a3 = check_gap_control(schedule, centers, n, q, eps_gap, on_singular="inf")
    meta = {"n": n, "q": q, "lambda": schedule.lam, "alpha": schedule.alpha}
    if isinstance(centers, CenterSequence):
        meta.update(centers.describe())
    return AuditReport(a1, a2, a3, {"A1": a1["passed"], "A2": a2["passed"], "A3": a3["passed"]}, meta)


# ---------------------------------------------------------------------------
# Monte-Carlo


def gap_tail_bound(n: int, lam: float, eps: float, K: float) -> float:
    """4 n^4 (2K/eps) exp(-lam n)."""
    return 4.0 * n ** 4 * (2.0 * K / eps) * math.exp(-lam * n)


def _draw(table: DensityTable, seed: int, trial: int, count: int) -> np.ndarray:
    rng = np.random.default_rng([seed, trial])
    return table.ppf(rng.random(count))


def montecarlo_gap_tail(schedule: LengthSchedule, table: DensityTable, n: int, eps: float, trials: int,
                        seed: int, q: int | None = None, K: float | None = None) -> TailStats:
    """Frequency of gap-control violations somewhere in A_{n,q(n)} over seeded trials."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if q is None:
        q = default_q(max(n, 2))
    if K is None:
        K = table.sup
    idx = np.arange(n, 2 ** (q + 1) * n)
    ll = schedule.loglens(idx)
    count = idx.size
    log_eps = math.log(eps)
    violations = 0
    lsum = np.logaddexp(ll[:, None], ll[None, :]) - math.log(2.0)
    off = ~np.eye(count, dtype=bool)
    batch = max(1, 2_000_000 // (count * count))
    for t0 in range(0, trials, batch):
        t1 = min(t0 + batch, trials)
        cs = np.stack([_draw(table, seed, t, count) for t in range(t0, t1)])
        if count <= 512:
            d = np.abs(cs[:, :, None] - cs[:, None, :])
            with np.errstate(divide="ignore"):
                lr = lsum[None] - np.log(d)
            lr = np.where(off[None], lr, -np.inf)
            worst = lr.reshape(t1 - t0, -1).max(axis=1)
        else:
            worst = np.array([gap_ratio_max(cc, ll, on_singular="inf")[0] for cc in cs])
        violations += int(np.sum(worst >= log_eps))
    bound = gap_tail_bound(n, schedule.lam, eps, K)
    extra = {"n": n, "q": q, "eps": eps, "K": K, "indices": (int(idx[0]), int(idx[-1])),
             "bound_holds": violations / trials <= bound}
    return TailStats(trials, violations, bound, None, extra)


def truncated_log_kernel(x, y, delta: float):
    """G(x, y) = -log|x - y| on |x - y| < delta, else 0."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    with np.errstate(divide="ignore"):
        return np.where(d < delta, -np.log(d), 0.0)


def _ilog(a):
    """∫_0^a -log t dt = a (1 - log a), with the a = 0 limit."""
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > 0, a * (1.0 - np.log(np.where(a > 0, a, 1.0))), 0.0)


def uniform_conditional_mean(x, delta: float):
    """E[G(x, Y)] for Y uniform on [0, 1]."""
    x = np.asarray(x, dtype=float)
    return _ilog(np.minimum(delta, x)) + _ilog(np.minimum(delta, 1.0 - x))


def uniform_mean(delta: float) -> float:
    """E[G(X, Y)] for X, Y independent uniform (delta <= 1)."""
    if delta <= 0:
        return 0.0
    d = min(delta, 1.0)
    return 2.0 * (d * (1.0 - math.log(d)) + 0.5 * d * d * math.log(d) - 0.25 * d * d)


class CenteredKernel:
    """H(x, y) = G(x, y) - g1(x) - g1(y) + c for centre density phi."""

    def __init__(self, table: DensityTable, delta: float, grid_points: int = 513):
        if delta < 0:
            raise ValueError("delta must be >= 0")
        self.delta = delta
        self.table = table
        self.exact = table.is_uniform
        if delta == 0:
            self.c = 0.0
            self._g = lambda x: np.zeros_like(np.asarray(x, dtype=float))
            self.interp_error = 0.0
            return
        if self.exact:
            self.c = uniform_mean(delta)
            self._g = lambda x: uniform_conditional_mean(x, delta)
            self.interp_error = 0.0
            return
        xs = np.linspace(0.0, 1.0, grid_points)
        gs = np.array([self._quad_g1(x) for x in xs])
        self._xs, self._gs = xs, gs
        self._g = lambda x: np.interp(x, xs, gs)
        self.c = float(integrate.simpson(gs * table(xs), x=xs))
        probes = np.random.default_rng(12345).random(16)
        self.interp_error = float(max(abs(self._g(p) - self._quad_g1(p)) for p in probes))

    def _quad_g1(self, x: float) -> float:
        f = lambda y: -math.log(abs(x - y)) * float(self.table(y))
        lo, hi = max(0.0, x - self.delta), min(1.0, x + self.delta)
        total = 0.0
        for a, b in ((lo, x), (x, hi)):
            if b > a:
                val, err = integrate.quad(f, a, b, limit=200, points=None)
                if not math.isfinite(val):
                    raise RuntimeError(f"quadrature failed for conditional mean at x={x}")
                total += val
        return total

    def g1(self, x):
        return self._g(x)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.delta == 0:
            return np.zeros(np.broadcast(x, y).shape)
        return truncated_log_kernel(x, y, self.delta) - self.g1(x) - self.g1(y) + self.c


def montecarlo_fourth_moment(table: DensityTable, delta: float, n: int, q: int, trials: int, seed: int,
                             eps: float = 0.1, probes=(0.05, 0.3, 0.5, 0.77, 0.95), probe_samples: int = 20000,
                             kernel: CenteredKernel | None = None) -> TailStats:
    """S_{n',n''} = Σ_{i != j} H(c_i, c_j) over A_{n'} x A_{n''}; tail frequencies and conditional means."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    H = kernel or CenteredKernel(table, delta)
    levels = [n * 2 ** s for s in range(q + 1)]
    idx = np.arange(n, 2 * levels[-1])
    lab = np.floor(np.log2(idx // n)).astype(np.intp)
    L = len(levels)
    starts = np.flatnonzero(np.r_[True, lab[1:] != lab[:-1]])
    norm = np.outer(levels, levels).astype(float)
    sums = np.zeros((trials, L, L))
    for t in range(trials):
        c = _draw(table, seed, t, idx.size)
        h = H(c[:, None], c[None, :])
        np.fill_diagonal(h, 0.0)
        per = np.add.reduceat(np.add.reduceat(h, starts, axis=1), starts, axis=0)
        sums[t] = per
    exceed = np.abs(sums) > eps * norm[None]
    violations = int(np.sum(exceed.any(axis=(1, 2))))
    # conditional means E[H(x, Y)] and E[H(Y, x)] at fixed probes
    rng = np.random.default_rng([seed, trials, 1])
    checks = []
    for x in probes:
        y = table.ppf(rng.random(probe_samples))
        for side, vals in (("first", H(x, y)), ("second", H(y, x))):
            m = float(np.mean(vals))
            se = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
            checks.append({"x": float(x), "argument": side, "mean": m, "stderr": se,
                           "within_3se": abs(m) <= 3.0 * se})
    fm = {(levels[a], levels[b]): sums[:, a, b] for a in range(L) for b in range(L)}
    extra = {
        "n": n, "q": q, "delta": delta, "eps": eps, "c": H.c, "interp_error": H.interp_error,
        "conditional_means": checks,
        "cell_frequency": {(levels[a], levels[b]): float(np.mean(exceed[:, a, b]))
                           for a in range(L) for b in range(L)},
    }
    return TailStats(trials, violations, math.nan, fm, extra)
