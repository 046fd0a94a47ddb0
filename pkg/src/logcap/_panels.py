"""Low-level evaluators for the logarithmic kernel.

Two families live here:

* ``uniform_pair_energy`` -- interaction of two unit-mass uniform measures on
  disjoint intervals, vectorised over pairs.  It switches between the
  corner-point antiderivative, a moment series and recursive bisection so
  that the result stays accurate from touching intervals down to
  point-mass separations.
* panel quadrature for piecewise-linear densities, used when at least one
  measure is not constant on its interval.
"""

from __future__ import annotations

import math

import numpy as np

# I(dx|[0,1]) for the unit square; checked against an independent
# quadrature in the test suite.
SELF_ENERGY_UNIT = 1.5

_LOG2 = math.log(2.0)

# Moments  ∬ e_a(t) e_b(s) (-log|s - t|) dt ds  over the unit square with the
# hat pieces e_0(x) = 1 - x, e_1(x) = x.
Q_SAME = np.array([[7.0 / 16.0, 5.0 / 16.0], [5.0 / 16.0, 7.0 / 16.0]])
# Same moments with the second panel one width to the right: -log(s + 1 - t).
_QT = 23.0 / 48.0 - 2.0 * _LOG2 / 3.0
Q_TOUCH = np.array([[_QT, -1.0 / 16.0], [29.0 / 48.0 - 2.0 * _LOG2 / 3.0, _QT]])

_GL_N = 12
_gx, _gw = np.polynomial.legendre.leggauss(_GL_N)
GL_X = 0.5 * (_gx + 1.0)
GL_W = 0.5 * _gw

# corner formula is used while dist^2 / (4 ha hb) stays below this
_COND_MAX = 100.0
# moment series is used for (ha + hb) / dist up to this ratio
_SERIES_RHO_MAX = 0.5
_SERIES_BINS = ((1e-4, 4), (1e-2, 8), (0.1, 16), (0.25, 28), (0.5, 56))
_OVERLAP_SLACK = 1e-9
# absolute slack: endpoints in [0, 1] are only known to a few ulps
_OVERLAP_ABS = 1e-15


class PartialOverlapError(ValueError):
    """Two intervals overlap without being identical."""


class QuadratureBudgetError(RuntimeError):
    """Adaptive quadrature ran out of nodes; ``estimate`` holds the best value."""

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


def _phi(t):
    # second antiderivative of log|t|, with the removable value 0 at t = 0
    t = np.abs(t)
    out = np.zeros_like(t)
    nz = t > 0
    tz = t[nz]
    out[nz] = tz * tz * (2.0 * np.log(tz) - 3.0) / 4.0
    return out


def _corner(dist, ha, hb):
    t1 = np.maximum(dist - ha - hb, 0.0)
    val = _phi(t1) - _phi(dist + ha - hb) - _phi(dist - ha + hb) + _phi(dist + ha + hb)
    return -val / (4.0 * ha * hb)


_SERIES_COEF: dict[int, np.ndarray] = {}


def _series_coef(kmax: int) -> np.ndarray:
    # coef[a, b] multiplies s1^(2a) s2^(2b): C(k, 2b) / ((2b+1)(2a+1) k) with k = 2a + 2b
    c = _SERIES_COEF.get(kmax)
    if c is None:
        h = kmax // 2
        c = np.zeros((h + 1, h + 1))
        for a in range(h + 1):
            for b in range(h + 1 - a):
                k = 2 * (a + b)
                if k:
                    c[a, b] = math.comb(k, 2 * b) / ((2 * b + 1) * (2 * a + 1) * k)
        _SERIES_COEF[kmax] = c
    return c


def _series(dist, ha, hb, kmax):
    # E[-log|D + u|], u = Y - X with X ~ U[-ha, ha], Y ~ U[-hb, hb]
    coef = _series_coef(kmax)
    e = np.arange(coef.shape[0])
    p1 = ((ha / dist) ** 2)[:, None] ** e[None, :]
    p2 = ((hb / dist) ** 2)[:, None] ** e[None, :]
    corr = np.einsum("na,ab,nb->n", p1, coef, p2)
    return -np.log(dist) + corr


def _split_pair(dist: float, ha: float, hb: float) -> float:
    # halve the larger interval; the two halves sit at dist -/+ h/2
    if ha >= hb:
        h = 0.5 * ha
        return 0.5 * (_scalar_pair(dist - h, h, hb) + _scalar_pair(dist + h, h, hb))
    h = 0.5 * hb
    return 0.5 * (_scalar_pair(dist - h, ha, h) + _scalar_pair(dist + h, ha, h))


def _scalar_pair(dist: float, ha: float, hb: float) -> float:
    return float(uniform_pair_energy(np.array([dist]), np.array([ha]), np.array([hb]))[0])


def uniform_pair_energy(dist, ha, hb):
    """Interaction of unit-mass uniform measures on two disjoint intervals.

    ``dist`` is the distance between centres, ``ha``/``hb`` the half-lengths.
    Touching intervals are allowed; overlapping ones raise
    :class:`PartialOverlapError`.
    """
    dist, ha, hb = np.broadcast_arrays(
        np.asarray(dist, dtype=float), np.asarray(ha, dtype=float), np.asarray(hb, dtype=float)
    )
    shape = dist.shape
    dist, ha, hb = dist.ravel(), ha.ravel(), hb.ravel()
    reach = ha + hb
    overlap = (dist <= 0.0) | (dist < reach * (1.0 - _OVERLAP_SLACK) - _OVERLAP_ABS)
    if np.any(overlap):
        bad = int(np.argmax(overlap))
        raise PartialOverlapError(
            f"intervals overlap: centre distance {dist[bad]!r} < half-length sum {reach[bad]!r}"
        )
    out = np.empty_like(dist)
    prod = ha * hb
    corner = (prod > 0.0) & (dist * dist <= _COND_MAX * 4.0 * prod)
    if corner.any():
        out[corner] = _corner(dist[corner], ha[corner], hb[corner])
    rho = reach / dist
    todo = ~corner
    lo = -1.0
    for hi, kmax in _SERIES_BINS:
        sel = todo & (rho > lo) & (rho <= hi)
        if sel.any():
            if not np.any(reach[sel] > 0):
                out[sel] = -np.log(dist[sel])
            else:
                out[sel] = _series(dist[sel], ha[sel], hb[sel], kmax)
        lo = hi
    rest = np.flatnonzero(todo & (rho > _SERIES_RHO_MAX))
    for i in rest:
        out[i] = _split_pair(float(dist[i]), float(ha[i]), float(hb[i]))
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# piecewise-linear panels


class _Budget:
    def __init__(self, max_nodes: int):
        self.max_nodes = max_nodes
        self.used = 0

    def spend(self, n: int):
        self.used += n
        return self.used <= self.max_nodes


def _gl_pairs(offset, ha, a0, a1, wa, hb, b0, b1, wb):
    """Tensor Gauss-Legendre for panel pairs; ``offset`` = centre_b - centre_a."""
    xa = ha[:, None] * (2.0 * GL_X - 1.0)[None, :]
    xb = offset[:, None] + hb[:, None] * (2.0 * GL_X - 1.0)[None, :]
    da = a0[:, None] * (1.0 - GL_X) + a1[:, None] * GL_X
    db = b0[:, None] * (1.0 - GL_X) + b1[:, None] * GL_X
    diff = np.abs(xb[:, None, :] - xa[:, :, None])
    ker = -np.log(diff)
    val = np.einsum("i,j,pi,pj,pij->p", GL_W, GL_W, da, db, ker)
    return wa * wb * val


def _exact_same(h, a0, a1, wa, b0, b1, wb):
    am = 0.5 * (a0 + a1)
    bm = 0.5 * (b0 + b1)
    av = np.stack([a0, a1], axis=-1)
    bv = np.stack([b0, b1], axis=-1)
    q = np.einsum("pa,ab,pb->p", av, Q_SAME, bv)
    return wa * wb * (-np.log(2.0 * h) * am * bm + q)


def _exact_touch(h, left, right):
    # left/right are (d0, d1, w) tuples of equal-width touching panels
    l0, l1, lw = left
    r0, r1, rw = right
    q = (
        l0 * (Q_TOUCH[0, 0] * r0 + Q_TOUCH[0, 1] * r1)
        + l1 * (Q_TOUCH[1, 0] * r0 + Q_TOUCH[1, 1] * r1)
    )
    lm = 0.5 * (l0 + l1)
    rm = 0.5 * (r0 + r1)
    return lw * rw * (-math.log(2.0 * h) * lm * rm + q)


def _near_pair(offset, pa, pb, tol, budget: _Budget, depth=0) -> float:
    """Recursive evaluation of a close panel pair (scalar)."""
    ha, a0, a1, wa = pa
    hb, b0, b1, wb = pb
    dist = abs(offset)
    reach = ha + hb
    same_width = abs(ha - hb) <= 1e-12 * reach
    if same_width and dist <= 1e-12 * reach:
        budget.spend(1)
        h = 0.5 * reach
        return float(
            _exact_same(np.array([h]), np.array([a0]), np.array([a1]), wa, np.array([b0]),
                        np.array([b1]), wb)[0]
        )
    if dist < reach * (1.0 - _OVERLAP_SLACK):
        raise PartialOverlapError(f"panels overlap: offset {offset!r}, half-lengths {ha!r}, {hb!r}")
    if same_width and abs(dist - reach) <= 1e-12 * reach:
        budget.spend(1)
        h = 0.5 * reach
        if offset > 0:
            return _exact_touch(h, (a0, a1, wa), (b0, b1, wb))
        return _exact_touch(h, (b0, b1, wb), (a0, a1, wa))
    if reach <= _SERIES_RHO_MAX * dist:
        if not budget.spend(_GL_N * _GL_N):
            raise QuadratureBudgetError("node budget exhausted", float("nan"))
        one = np.array([1.0])
        return float(
            _gl_pairs(np.array([offset]), ha * one, a0 * one, a1 * one, wa, hb * one, b0 * one,
                      b1 * one, wb)[0]
        )
    # constant-density closed form once the slope contribution is below tol
    ka = max(abs(a0), abs(a1))
    kb = max(abs(b0), abs(b1))
    slope = abs(a1 - a0) * kb + abs(b1 - b0) * ka
    scale = wa * wb * slope * (1.0 + abs(math.log(2.0 * max(ha, hb))))
    if scale <= tol or depth > 60:
        budget.spend(1)
        e = float(uniform_pair_energy(np.array([dist]), np.array([ha]), np.array([hb]))[0])
        return wa * wb * 0.5 * (a0 + a1) * 0.5 * (b0 + b1) * e
    sign = 1.0 if offset > 0 else -1.0
    if ha >= hb:
        am = 0.5 * (a0 + a1)
        h = 0.5 * ha
        # piece nearer to b first; offsets measured from each sub-panel centre
        near = (h, am, a1, 0.5 * wa) if sign > 0 else (h, a0, am, 0.5 * wa)
        far = (h, a0, am, 0.5 * wa) if sign > 0 else (h, am, a1, 0.5 * wa)
        return _near_pair(offset - sign * h, near, pb, tol / 2, budget, depth + 1) + _near_pair(
            offset + sign * h, far, pb, tol / 2, budget, depth + 1
        )
    bm = 0.5 * (b0 + b1)
    h = 0.5 * hb
    near = (h, b0, bm, 0.5 * wb) if sign > 0 else (h, bm, b1, 0.5 * wb)
    far = (h, bm, b1, 0.5 * wb) if sign > 0 else (h, b0, bm, 0.5 * wb)
    return _near_pair(offset - sign * h, pa, near, tol / 2, budget, depth + 1) + _near_pair(
        offset + sign * h, pa, far, tol / 2, budget, depth + 1
    )


def panels_from_grid(values: np.ndarray, edges: np.ndarray):
    """Split a piecewise-linear density (ordinates at ``edges``) into panels.

    Returns mid-points, half-widths, left/right ordinates and widths, all in
    the coordinate of ``edges``.
    """
    edges = np.asarray(edges, dtype=float)
    values = np.asarray(values, dtype=float)
    mids = 0.5 * (edges[:-1] + edges[1:])
    halves = 0.5 * np.diff(edges)
    return mids, halves, values[:-1], values[1:], np.diff(edges)


def panel_interaction(pa, pb, offset: float, scale_a: float, scale_b: float, tol: float,
                      max_nodes: int = 10_000_000) -> float:
    """Interaction of two panel families.

    ``pa``/``pb`` come from :func:`panels_from_grid` in reference coordinates
    on [0, 1]; geometry is ``position = offset_frame + scale * (ref - 1/2)``
    with ``offset`` added to the second family.  Mass elements use the
    reference widths.  Identical panels (same frame, same grid) are
    integrated exactly.
    """
    ma, ha_ref, a0, a1, wa = pa
    mb, hb_ref, b0, b1, wb = pb
    ca = scale_a * (ma - 0.5)
    cb = offset + scale_b * (mb - 0.5)
    ha = scale_a * ha_ref
    hb = scale_b * hb_ref
    na, nb = len(ma), len(mb)
    budget = _Budget(max_nodes)
    ii, jj = np.meshgrid(np.arange(na), np.arange(nb), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    off = cb[jj] - ca[ii]
    dist = np.abs(off)
    reach = ha[ii] + hb[jj]
    far = reach <= _SERIES_RHO_MAX * dist
    total = 0.0
    idx = np.flatnonzero(far)
    if idx.size:
        if not budget.spend(idx.size * _GL_N * _GL_N):
            # centre-point value of the far pairs as the fallback estimate
            i, j = ii[idx], jj[idx]
            mass = wa[i] * 0.5 * (a0[i] + a1[i]) * wb[j] * 0.5 * (b0[j] + b1[j])
            raise QuadratureBudgetError("node budget exhausted in far field",
                                        float(np.sum(mass * -np.log(dist[idx]))))
        parts = []
        for start in range(0, idx.size, 20000):
            sl = idx[start:start + 20000]
            i, j = ii[sl], jj[sl]
            parts.append(
                _gl_pairs(off[sl], ha[i], a0[i], a1[i], wa[i], hb[j], b0[j], b1[j], wb[j])
            )
        total += float(np.sum(np.concatenate(parts)))
    near = np.flatnonzero(~far)
    if near.size:
        local = tol / near.size
        vals = []
        for k in near:
            i, j = ii[k], jj[k]
            try:
                vals.append(
                    _near_pair(float(off[k]), (ha[i], a0[i], a1[i], wa[i]),
                               (hb[j], b0[j], b1[j], wb[j]), local, budget)
                )
            except QuadratureBudgetError as exc:
                raise QuadratureBudgetError(str(exc), total + sum(vals)) from None
            if budget.used > budget.max_nodes:
                raise QuadratureBudgetError("node budget exhausted", total + sum(vals))
        total += math.fsum(vals)
    return total


def toeplitz_self(ga: np.ndarray, gb: np.ndarray) -> float:
    """∬ ga(s) gb(t) (-log|s - t|) ds dt for ordinates on a shared uniform grid of [0, 1].

    Exact for the piecewise-linear interpolants up to the Gauss-Legendre
    far-panel rule, which is accurate to ~1e-14 at two panel widths.
    """
    ga = np.asarray(ga, dtype=float)
    gb = np.asarray(gb, dtype=float)
    npan = len(ga) - 1
    step = 1.0 / npan
    mean_a = step * (np.sum(ga) - 0.5 * (ga[0] + ga[-1]))
    mean_b = step * (np.sum(gb) - 0.5 * (gb[0] + gb[-1]))
    q = _q_table(npan)  # shape (2*npan - 1, 2, 2), index d + npan - 1
    total = 0.0
    for al in range(2):
        a = ga[al:npan + al]
        for be in range(2):
            b = gb[be:npan + be]
            corr = np.correlate(b, a, mode="full")
            total += float(np.dot(q[:, al, be], corr))
    return -math.log(step) * mean_a * mean_b + step * step * total


_Q_CACHE: dict[int, np.ndarray] = {}


def _q_table(npan: int) -> np.ndarray:
    if npan in _Q_CACHE:
        return _Q_CACHE[npan]
    d = np.arange(-(npan - 1), npan, dtype=float)
    q = np.empty((d.size, 2, 2))
    e = np.stack([1.0 - GL_X, GL_X])  # (2, n)
    far = np.abs(d) >= 2
    if far.any():
        df = d[far]
        # -log|s + d - t| at nodes t_i (first panel), s_j (second panel)
        ker = -np.log(np.abs(GL_X[None, None, :] + df[:, None, None] - GL_X[None, :, None]))
        q[far] = np.einsum("i,j,ai,bj,dij->dab", GL_W, GL_W, e, e, ker)
    zero = npan - 1
    q[zero] = Q_SAME
    if npan > 1:
        q[zero + 1] = Q_TOUCH
        q[zero - 1] = Q_TOUCH.T
    if len(_Q_CACHE) > 16:
        _Q_CACHE.clear()
    _Q_CACHE[npan] = q
    return q
