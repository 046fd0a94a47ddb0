"""Acceptance checks, shared by the test suite and the ``selftest`` command.

Each ``criterion_<k>`` returns a :class:`CriterionResult` carrying the
measured values next to the thresholds they were compared with.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import assumptions, equilibrium, kernel, redistribution, setgen, transition
from .kernel import DensitySpec, Interval

SEED = 20240601
LOG4 = math.log(4.0)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        vals = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{verdict}] {self.number:2d} {self.title}: {vals} ({self.seconds:.2f}s)"


def _short(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(str(_short(x)) for x in v) + "]"
    return str(v)


def random_disjoint_pairs(count: int, rng: np.random.Generator):
    """Pairs of disjoint intervals in [0, 1] with log-uniform lengths and gaps."""
    out = []
    while len(out) < count:
        la, lb = np.exp(rng.uniform(np.log(1e-6), np.log(0.4), 2))
        gap = np.exp(rng.uniform(np.log(1e-8), np.log(0.4)))
        span = la + gap + lb
        if span >= 1.0:
            continue
        lo = rng.uniform(0.0, 1.0 - span)
        a = Interval(lo + 0.5 * la, math.log(la))
        b = Interval(lo + la + gap + 0.5 * lb, math.log(lb))
        out.append((a, b) if rng.random() < 0.5 else (b, a))
    return out


def criterion_1() -> CriterionResult:
    rng = np.random.default_rng([SEED, 1])
    pairs = random_disjoint_pairs(100, rng)
    one = DensitySpec.constant(1.0)
    t0 = time.perf_counter()
    worst = 0.0
    for a, b in pairs:
        cf = kernel.pair_interaction_closed_form(a, one, b, one)
        qv = kernel.interaction_quadrature(a, one, b, one, tol=1e-12)
        worst = max(worst, abs(cf - qv) / max(abs(qv), 1e-300))
    dt = time.perf_counter() - t0
    return CriterionResult(1, "closed form vs quadrature", worst <= 1e-9 and dt < 1.0,
                           {"max_rel_diff": worst, "runtime_s": dt}, {"rel": 1e-9, "runtime_s": 1.0}, dt)


def c0_by_quadrature() -> float:
    """∬_{[0,1]^2} -log|x - y| dx dy as 2 ∫_0^1 ∫_0^x -log(x - y) dy dx, both integrals numerical."""
    inner = lambda x: integrate.quad(lambda y: -math.log(x - y) if y < x else 0.0, 0.0, x,
                                     epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    val, _ = integrate.quad(inner, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
    return 2.0 * val


def criterion_2() -> CriterionResult:
    t0 = time.perf_counter()
    c0 = c0_by_quadrature()
    s = kernel.self_energy_uniform(Interval(0.5, -1.0))
    ok = abs(c0 - 1.5) <= 1e-8 and abs(s - 2.5) <= 1e-8 and abs(kernel.SELF_ENERGY_UNIT - c0) <= 1e-8
    return CriterionResult(2, "C0 oracle", ok, {"C0_quadrature": c0, "self_energy(-1)": s},
                           {"abs": 1e-8}, time.perf_counter() - t0)


def criterion_3() -> CriterionResult:
    t0 = time.perf_counter()
    est = equilibrium.solve_equilibrium(equilibrium.discretize([Interval(0.5, 0.0)], 2000))
    dt = time.perf_counter() - t0
    ok = abs(est.energy - LOG4) <= 1e-3 and abs(est.capacity - 0.25) <= 5e-4 and dt < 10.0
    return CriterionResult(3, "interval capacity", ok,
                           {"energy": est.energy, "capacity": est.capacity, "runtime_s": dt},
                           {"energy": 1e-3, "capacity": 5e-4, "runtime_s": 10.0}, dt)


def criterion_4() -> CriterionResult:
    t0 = time.perf_counter()
    est = equilibrium.solve_equilibrium(equilibrium.discretize([Interval.from_endpoints(0.0, 0.5)], 2000))
    return CriterionResult(4, "scaling law", abs(est.capacity - 0.125) <= 5e-4, {"capacity": est.capacity},
                           {"abs": 5e-4}, time.perf_counter() - t0)


def criterion_5() -> CriterionResult:
    a, b = 0.1, 0.4
    t0 = time.perf_counter()
    est = equilibrium.solve_equilibrium(equilibrium.discretize(
        [Interval.from_endpoints(0.5 - b, 0.5 - a), Interval.from_endpoints(0.5 + a, 0.5 + b)], 2000))
    target = 0.5 * math.sqrt(b * b - a * a)
    return CriterionResult(5, "two-interval oracle", abs(est.capacity - target) <= 1e-3,
                           {"capacity": est.capacity, "oracle": target}, {"abs": 1e-3},
                           time.perf_counter() - t0)


def random_farfield_pairs(count: int, rng: np.random.Generator):
    """Disjoint pairs with (r + r')/(2|c - c'|) < 1 and random positive densities."""
    out = []
    for a, b in random_disjoint_pairs(count, rng):
        fa, fb = rng.uniform(0.1, 3.0, 2)
        out.append((a, float(fa), b, float(fb)))
    return out


def criterion_6() -> CriterionResult:
    rng = np.random.default_rng([SEED, 6])
    t0 = time.perf_counter()
    violations = 0
    worst = 0.0
    for a, fa, b, fb in random_farfield_pairs(1000, rng):
        exact = kernel.pair_interaction_closed_form(a, DensitySpec.constant(fa), b, DensitySpec.constant(fb))
        val, bound = kernel.farfield_interaction(a, fa, b, fb)
        err = abs(exact - val)
        worst = max(worst, err / bound if bound > 0 else (0.0 if err == 0 else math.inf))
        violations += err > bound
    return CriterionResult(6, "far-field certificate", violations == 0,
                           {"violations": violations, "max_err_over_bound": worst}, {"violations": 0},
                           time.perf_counter() - t0)


def criterion_7() -> CriterionResult:
    t0 = time.perf_counter()
    lam = 1.0
    worst = 0.0
    got = []
    table = setgen.DensityTable.uniform()
    for n in (10, 100, 1000):
        cfg = redistribution.RedistributionConfig(setgen.LengthSchedule(lam, 1.0),
                                                  setgen.CenterSequence.iid(table, SEED))
        _, br = redistribution.single_level(cfg, n)
        exact = lam * (3 * n - 1) / (2 * n) + kernel.SELF_ENERGY_UNIT / n
        got.append(br.self_sum)
        worst = max(worst, abs(br.self_sum - exact) / exact)
    return CriterionResult(7, "self-sum identity", worst <= 4 * np.finfo(float).eps,
                           {"self_sums": got, "max_rel_err": worst}, {"rel": 4 * np.finfo(float).eps},
                           time.perf_counter() - t0)


def criterion_8(ms=(64, 256, 1024), threads: int = 1) -> CriterionResult:
    t0 = time.perf_counter()
    table = setgen.DensityTable.uniform()
    cfg = redistribution.RedistributionConfig(setgen.LengthSchedule(1.0, 1.0),
                                              setgen.CenterSequence.iid(table, SEED), q_override=4,
                                              threads=threads)
    devs = []
    energies = []
    for m in ms:
        _, br = redistribution.multi_level(cfg, m)
        energies.append(br.total)
        devs.append(abs(br.total - 1.5))
    dt = time.perf_counter() - t0
    monotone = all(b <= a for a, b in zip(devs, devs[1:]))
    ok = monotone and devs[-1] <= 0.15 and dt < 120.0
    return CriterionResult(8, "multi-level convergence", ok,
                           {"energies": energies, "deviations": devs, "non_increasing": monotone, "runtime_s": dt},
                           {"final_deviation": 0.15, "runtime_s": 120.0}, dt)


def clustered_sequence(count: int) -> setgen.CenterSequence:
    return setgen.CenterSequence.explicit(0.5 + np.exp(-np.arange(1, count + 1, dtype=float)))


def criterion_9() -> CriterionResult:
    t0 = time.perf_counter()
    table = setgen.DensityTable.uniform()
    sched = setgen.LengthSchedule(1.0, 1.0)
    iid = setgen.CenterSequence.iid(table, SEED)
    good = assumptions.audit(sched, iid, 4096)
    bad_small = assumptions.audit(sched, clustered_sequence(100), 8, q=1)
    bad_large = assumptions.audit(sched, clustered_sequence(2 ** 16), 4096)
    bad_ok = all(not r.verdicts["A2"] and not r.verdicts["A3"] for r in (bad_small, bad_large))
    ok = good.passed and bad_ok
    return CriterionResult(9, "assumption audit", ok, {
        "iid": good.verdicts, "clustered_n8": bad_small.verdicts, "clustered_n4096": bad_large.verdicts,
        "clustered_n8_gap_ratio": bad_small.a3["max_ratio"],
    }, {"A2_eps": assumptions.EPS_LOG_SPACING, "A3_eps": assumptions.EPS_GAP}, time.perf_counter() - t0)


def criterion_10() -> CriterionResult:
    t0 = time.perf_counter()
    ts = assumptions.montecarlo_gap_tail(setgen.LengthSchedule(1.0, 1.0), setgen.DensityTable.uniform(),
                                         20, 0.1, 10_000, SEED, K=1.0)
    dt = time.perf_counter() - t0
    ok = ts.frequency <= ts.bound_value and dt < 60.0
    return CriterionResult(10, "Monte-Carlo gap tail", ok,
                           {"frequency": ts.frequency, "bound": ts.bound_value, "runtime_s": dt},
                           {"runtime_s": 60.0}, dt)


def criterion_11(trials: int = 500) -> CriterionResult:
    t0 = time.perf_counter()
    table = setgen.DensityTable.uniform()
    kern = assumptions.CenteredKernel(table, 0.1)
    freqs = []
    means_ok = True
    for n in (8, 16, 32):
        ts = assumptions.montecarlo_fourth_moment(table, 0.1, n, 2, trials, SEED, eps=0.1, kernel=kern)
        freqs.append(ts.frequency)
        means_ok &= all(c["within_3se"] for c in ts.extra["conditional_means"])
    mono = all(b <= a for a, b in zip(freqs, freqs[1:]))
    return CriterionResult(11, "fourth-moment kernel", bool(means_ok and mono),
                           {"tail_frequencies": freqs, "conditional_means_ok": bool(means_ok)},
                           {"stderr_multiple": 3}, time.perf_counter() - t0)


def criterion_12() -> CriterionResult:
    t0 = time.perf_counter()
    table = setgen.DensityTable.uniform()
    cfg = redistribution.RedistributionConfig(setgen.LengthSchedule(0.5, 1.0), setgen.CenterSequence.iid(table, SEED))
    nu = kernel.PiecewiseMeasure((kernel.Atom(Interval(0.5, 0.0), redistribution.clip_equilibrium(0.05), 1.0),),
                                 probability=True)
    res = redistribution.redistribution_step(nu, cfg, 0.3, 64)
    mass = res.nu_prime.total_mass
    contained = redistribution.supported_within(res.levels, redistribution._merge(redistribution._support_pairs(nu)))
    ok = res.energy_after < res.energy_before + 0.3 and abs(mass - 1.0) <= 1e-9 and contained
    return CriterionResult(12, "re-distribution step", ok, {
        "level": res.level, "q": res.q, "energy_before": res.energy_before, "energy_after": res.energy_after,
        "mass": mass, "contained": contained}, {"eps": 0.3, "mass": 1e-9}, time.perf_counter() - t0)


def criterion_13() -> CriterionResult:
    t0 = time.perf_counter()
    table = setgen.DensityTable.uniform()
    cfg = redistribution.RedistributionConfig(setgen.LengthSchedule(0.25, 1.0), setgen.CenterSequence.iid(table, SEED),
                                              q_override=4)
    run = redistribution.nested_driver(cfg, 0.5, 1)
    ledger = run.ledger()
    ok = run.final_energy < LOG4 + 2 * 0.5 and all(r["increment"] < r["budget"] for r in ledger)
    return CriterionResult(13, "telescoping ledger", ok, {
        "initial": run.initial_energy, "final": run.final_energy,
        "increments": [r["increment"] for r in ledger], "budgets": [r["budget"] for r in ledger]},
        {"final": LOG4 + 1.0}, time.perf_counter() - t0)


def criterion_14(ms=(64, 256, 1024), lam: float = 0.25) -> CriterionResult:
    t0 = time.perf_counter()
    reps = transition.sweep_alpha([0.8, 1.0, 1.25, 1.5], ms, lam=lam, seed=SEED, q_override=4)
    verdicts = [r.series_verdict for r in reps]
    r1 = reps[1]
    lbs = [r1.lower_bounds.get(m, math.nan) for m in ms]
    target = math.exp(-1.5)
    stable = all(abs(b - target) <= 0.03 for b in lbs)
    h = transition.h0_volume_bound(setgen.LengthSchedule(1.0, 2.0), 1)
    bracket = h.lower <= math.pi ** 2 / 6 <= h.upper
    ok = verdicts == ["divergent", "divergent", "convergent", "convergent"] and stable and bracket
    return CriterionResult(14, "phase sweep", ok, {
        "verdicts": verdicts, "alpha1_lower_bounds": lbs, "h0_alpha2": h.value,
        "h0_bracket": (h.lower, h.upper)}, {"lower_bound_band": 0.03, "lambda": lam}, time.perf_counter() - t0)


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 15)}


def run_all(which=None):
    out = []
    for k in which or sorted(CRITERIA):
        try:
            out.append(CRITERIA[k]())
        except Exception as exc:
            out.append(CriterionResult(k, "error", False, {"error": f"{type(exc).__name__}: {exc}"}))
    return out
