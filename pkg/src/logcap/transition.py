"""Zero-capacity series test, h0 cover sums and the alpha sweep.

Two one-sided certificates are reported per alpha: energies of explicit
probability measures on finite unions (Cap >= exp(-I)) when the series
diverges, and h0 cover sums of the canonical covers when it converges.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import Discretization, solve_equilibrium
from .kernel import Interval
from .redistribution import RedistributionConfig, effective_geometry, multi_level
from .setgen import CenterSequence, DensityTable, LengthSchedule

log = logging.getLogger(__name__)

__all__ = [
    "H0Sum",
    "RegimeReport",
    "SeriesReport",
    "classify_series",
    "h0_volume_bound",
    "regime_table",
    "sweep_alpha",
]

DIRECT_TERMS = 100_000

FOOTER = ("exp(-I(mu^m)) bounds the capacity of the finite union carrying mu^m from below; "
          "h0 sums bound the h0-volume of the canonical cover from above. "
          "Neither is a computation of the capacity of the limit set.")


def _power_sum(alpha: float, lo: int, hi: int) -> float:
    """Σ_{k=lo}^{hi-1} k^{-alpha}, summed from small terms up."""
    if hi <= lo:
        return 0.0
    k = np.arange(hi - 1, lo - 1, -1, dtype=float)
    return float(np.sum(k ** -alpha))


def _tail_integral(alpha: float, m: float) -> float:
    """∫_m^∞ x^{-alpha} dx for alpha > 1."""
    return m ** (1.0 - alpha) / (alpha - 1.0)


@dataclass
class H0Sum:
    m: int
    value: float
    lower: float
    upper: float
    infinite: bool = False


def h0_volume_bound(schedule: LengthSchedule, m: int, direct_terms: int = DIRECT_TERMS) -> H0Sum:
    """Σ_{k>=m} 1/|log l_k| for the cover {I_k}_{k>=m}, with an integral-test bracket.

    Terms k < m + direct_terms are summed directly; for the rest
    ∫_M^∞ <= Σ_{k>=M} <= f(M) + ∫_M^∞ and the estimate adds the
    Euler-Maclaurin midpoint.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    lam, a = schedule.lam, schedule.alpha
    if a <= 1.0:
        return H0Sum(m, math.inf, math.inf, math.inf, True)
    M = m + direct_terms
    head = _power_sum(a, m, M)
    integral = _tail_integral(a, M)
    fM = M ** -a
    dfM = -a * M ** (-a - 1.0)
    est = head + integral + 0.5 * fM - dfM / 12.0
    return H0Sum(m, est / lam, (head + integral) / lam, (head + integral + fM) / lam)


@dataclass
class SeriesReport:
    alpha: float
    lam: float
    verdict: str
    partial_sums: dict = field(default_factory=dict)
    brackets: dict = field(default_factory=dict)


def classify_series(schedule: LengthSchedule, checkpoints=(10, 100, 1000, 10_000, 100_000)) -> SeriesReport:
    """Σ 1/(lam k^alpha) converges iff alpha > 1; partial sums S_N and brackets for the full sum."""
    lam, a = schedule.lam, schedule.alpha
    verdict = "convergent" if a > 1.0 else "divergent"
    partial, brackets = {}, {}
    for N in checkpoints:
        S = _power_sum(a, 1, N + 1) / lam
        partial[N] = S
        if a > 1.0:
            # Σ_{k>N} lies between ∫_{N+1}^∞ and ∫_N^∞
            brackets[N] = (S + _tail_integral(a, N + 1) / lam, S + _tail_integral(a, N) / lam)
        else:
            brackets[N] = (S, math.inf)
    return SeriesReport(a, lam, verdict, partial, brackets)


@dataclass
class RegimeReport:
    alpha: float
    lam: float
    series_verdict: str
    tail_sums: dict = field(default_factory=dict)
    energies: dict = field(default_factory=dict)
    lower_bounds: dict = field(default_factory=dict)
    capacity_estimates: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    series: SeriesReport | None = None


def union_capacity(centers: np.ndarray, loglens: np.ndarray) -> float:
    """Equilibrium capacity of a disjoint union, one panel per interval."""
    c, ll = effective_geometry(centers, loglens)
    owners = [Interval(float(x), float(l)) for x, l in zip(c, ll)]
    n = len(owners)
    d = Discretization(owners, np.arange(n), np.zeros(n), np.full(n, 0.5), "uniform")
    return solve_equilibrium(d).capacity


def sweep_alpha(alphas, m_grid, lam: float = 1.0, seed: int = 0, table: DensityTable | None = None,
                q_override: int | None = 4, tol: float = 1e-10, threads: int = 1,
                capacity_max_intervals: int = 2048) -> list[RegimeReport]:
    """Per-alpha certificates on one shared centre sequence (only the lengths change)."""
    table = table or DensityTable.uniform()
    centers = CenterSequence.iid(table, seed)
    reports = []
    for a in alphas:
        sched = LengthSchedule(lam, a)
        series = classify_series(sched)
        rep = RegimeReport(a, lam, series.verdict, series=series)
        if a <= 1.0:
            cfg = RedistributionConfig(sched, centers, phi=table, q_override=q_override, tol=tol, threads=threads)
            for m in m_grid:
                try:
                    mu, br = multi_level(cfg, m)
                except Exception as exc:  # per-cell failure, keep sweeping
                    rep.errors[m] = f"{type(exc).__name__}: {exc}"
                    log.info("alpha=%g m=%d: %s", a, m, rep.errors[m])
                    continue
                rep.energies[m] = br.total
                rep.lower_bounds[m] = math.exp(-br.total)
                if len(mu) <= capacity_max_intervals:
                    c = np.array([at.interval.center for at in mu.atoms])
                    ll = np.array([at.interval.loglen for at in mu.atoms])
                    try:
                        rep.capacity_estimates[m] = union_capacity(c, ll)
                    except Exception as exc:
                        rep.errors[m] = f"capacity: {exc}"
        else:
            for m in m_grid:
                rep.tail_sums[m] = h0_volume_bound(sched, m)
        reports.append(rep)
    return reports


def regime_table(reports) -> tuple[list[str], list[list]]:
    header = ["alpha", "lambda", "verdict", "m", "energy", "lower_bound", "union_capacity",
              "h0_sum", "h0_lower", "h0_upper", "status"]
    rows = []
    for r in reports:
        ms = sorted(set(r.energies) | set(r.tail_sums) | set(r.errors))
        if not ms:
            rows.append([r.alpha, r.lam, r.series_verdict] + [""] * 7 + ["ok"])
        for m in ms:
            h = r.tail_sums.get(m)
            rows.append([
                r.alpha, r.lam, r.series_verdict, m,
                r.energies.get(m, ""), r.lower_bounds.get(m, ""), r.capacity_estimates.get(m, ""),
                "" if h is None else h.value, "" if h is None else h.lower, "" if h is None else h.upper,
                r.errors.get(m, "ok"),
            ])
    return header, rows
