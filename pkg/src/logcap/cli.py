"""Command-line driver: ``logcap <command> --config FILE --out DIR``.

Every run writes ``report.txt``, its tables as CSV and ``resolved_config.ini``;
a failed run writes ``error.txt`` and marks its report incomplete.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import traceback
from pathlib import Path

import numpy as np

from . import assumptions, equilibrium, redistribution, selftest, setgen, transition
from .config import COMMANDS, ConfigError, ExperimentConfig, load_config, parse_config
from .kernel import Atom, Interval, PiecewiseMeasure
from .report import write_csv, write_report

log = logging.getLogger("logcap")


def _table(cfg: ExperimentConfig) -> setgen.DensityTable:
    if cfg.density == "uniform":
        return setgen.DensityTable.uniform()
    return setgen.DensityTable.from_file(cfg.density)


def run_capacity(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    ivs = [Interval.from_endpoints(lo, hi) for lo, hi in cfg.intervals]
    rows = []
    for b in cfg.panels:
        e = equilibrium.solve_equilibrium(equilibrium.discretize(ivs, b))
        rows.append([b, e.energy, e.capacity, e.potential_spread, e.projected])
    write_csv(out / "capacity.csv", ["panels", "energy", "capacity", "potential_spread", "projected"], rows)
    summary = {"intervals": [f"{lo}:{hi}" for lo, hi in cfg.intervals], "finest_energy": rows[-1][1],
               "finest_capacity": rows[-1][2]}
    if len(cfg.panels) >= 3:
        ref = equilibrium.refine_estimate(ivs, cfg.panels)
        summary.update(extrapolated_energy=ref.energy, extrapolated_capacity=ref.capacity,
                       error_estimate=ref.error_estimate, monotone=ref.diagnostics.get("monotone", True))
        best = ref
    else:
        best = equilibrium.solve_equilibrium(equilibrium.discretize(ivs, cfg.panels[-1]))
    prof = equilibrium.equilibrium_density_profile(best)
    write_csv(out / "profile.csv", ["x", "density"], prof.table().tolist())
    return {"capacity": summary}


def run_audit(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    table = _table(cfg)
    centers = setgen.CenterSequence.iid(table, cfg.seed)
    sched = setgen.LengthSchedule(cfg.lam, cfg.alpha)
    rep = assumptions.audit(sched, centers, cfg.n, cfg.q_override, table, cfg.eps_log_spacing, cfg.eps_gap)
    write_csv(out / "a1_trace.csv", ["n", "max_deviation", "worst_function"], rep.a1["trace"])
    rows = []
    for d, mat in rep.a2["averages"].items():
        for i, n1 in enumerate(rep.a2["levels"]):
            for j, n2 in enumerate(rep.a2["levels"]):
                rows.append([d, n1, n2, mat[i][j]])
    write_csv(out / "a2_averages.csv", ["delta", "n1", "n2", "average"], rows)
    a1 = {k: rep.a1[k] for k in ("max_deviation", "threshold", "trend_slope", "passed")}
    a2 = {"worst_by_delta": {str(k): v for k, v in rep.a2["worst_by_delta"].items()},
          "eps": rep.a2["eps"], "passing_deltas": rep.a2["passing_deltas"], "passed": rep.a2["passed"]}
    a3 = {k: rep.a3[k] for k in ("indices", "max_ratio", "log_max_ratio", "worst_pair", "eps", "passed")}
    return {"audit": rep.meta, "A1": a1, "A2": a2, "A3": a3, "verdicts": rep.verdicts}


def run_montecarlo(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    table = _table(cfg)
    sched = setgen.LengthSchedule(cfg.lam, cfg.alpha)
    gap = assumptions.montecarlo_gap_tail(sched, table, cfg.n, cfg.eps_tail, cfg.trials, cfg.seed, cfg.q_override)
    write_csv(out / "gap_tail.csv", ["n", "trials", "violations", "frequency", "bound", "vacuous"],
              [[cfg.n, gap.trials, gap.violation_count, gap.frequency, gap.bound_value, gap.vacuous]])
    q = cfg.q_override or 2
    kern = assumptions.CenteredKernel(table, cfg.delta)
    fm_rows, cm_rows, freqs = [], [], {}
    fm_trials = min(cfg.trials, 2000)
    for n in cfg.n_grid:
        ts = assumptions.montecarlo_fourth_moment(table, cfg.delta, n, q, fm_trials, cfg.seed,
                                                  eps=cfg.eps_moment, kernel=kern)
        freqs[n] = ts.frequency
        for (n1, n2), f in ts.extra["cell_frequency"].items():
            s = ts.fourth_moment_sums[(n1, n2)]
            fm_rows.append([n, n1, n2, f, float(np.mean(s)), float(np.std(s))])
        for c in ts.extra["conditional_means"]:
            cm_rows.append([n, c["x"], c["argument"], c["mean"], c["stderr"], c["within_3se"]])
    write_csv(out / "fourth_moment.csv", ["n", "n1", "n2", "tail_frequency", "mean_S", "std_S"], fm_rows)
    write_csv(out / "conditional_means.csv", ["n", "x", "argument", "mean", "stderr", "within_3se"], cm_rows)
    fr = [freqs[n] for n in cfg.n_grid]
    return {
        "gap_tail": {"n": cfg.n, "q": gap.extra["q"], "trials": gap.trials, "violations": gap.violation_count,
                     "frequency": gap.frequency, "bound": gap.bound_value, "vacuous": gap.vacuous},
        "fourth_moment": {"delta": cfg.delta, "q": q, "trials": fm_trials, "tail_frequency": fr,
                          "non_increasing": all(b <= a for a, b in zip(fr, fr[1:])),
                          "conditional_means_ok": all(r[-1] for r in cm_rows)},
    }


def _stage_rows(stages):
    return [[i + 1, s.level, s.q, s.energy_before, s.energy_after, s.budget, s.increment,
             s.discarded_straddlers, s.occupancy, len(s.nu_prime)] for i, s in enumerate(stages)]


_STAGE_HEADER = ["stage", "level", "q", "energy_before", "energy_after", "budget", "increment",
                 "straddlers", "occupancy", "atoms"]


def run_redistribute(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    table = _table(cfg)
    rc = redistribution.RedistributionConfig(setgen.LengthSchedule(cfg.lam, cfg.alpha),
                                             setgen.CenterSequence.iid(table, cfg.seed), phi=table,
                                             q_override=cfg.q_override, threads=threads)
    if cfg.stages == 0:
        nu = PiecewiseMeasure((Atom(Interval(0.5, 0.0), redistribution.clip_equilibrium(cfg.delta_clip), 1.0),),
                              probability=True)
        res = redistribution.redistribution_step(nu, rc, cfg.eps_step, cfg.m_min)
        write_csv(out / "stages.csv", _STAGE_HEADER, _stage_rows([res]))
        write_csv(out / "attempts.csv", ["level", "q", "occupancy", "energy", "outcome"],
                  [[a.get(k, "") for k in ("level", "q", "occupancy", "energy", "outcome")] for a in res.attempts])
        return {"step": {"delta_clip": cfg.delta_clip, "eps": cfg.eps_step, "level": res.level, "q": res.q,
                         "energy_before": res.energy_before, "energy_after": res.energy_after,
                         "accepted": res.increment < res.budget, "mass": res.nu_prime.total_mass,
                         "straddlers": res.discarded_straddlers}}
    try:
        run = redistribution.nested_driver(rc, cfg.eps_step, cfg.stages, cfg.m_min)
    except redistribution.NestedRunError as exc:
        write_csv(out / "stages.csv", _STAGE_HEADER, _stage_rows(exc.completed))
        attempts = getattr(exc.cause, "attempts", [])
        write_csv(out / "attempts.csv", ["level", "q", "occupancy", "energy", "outcome"],
                  [[a.get(k, "") for k in ("level", "q", "occupancy", "energy", "outcome")] for a in attempts])
        raise
    write_csv(out / "stages.csv", _STAGE_HEADER, _stage_rows(run.stages))
    return {"nested": {"eps": cfg.eps_step, "stages": cfg.stages, "delta_clip": run.delta_clip,
                       "initial_energy": run.initial_energy, "final_energy": run.final_energy,
                       "bound": math.log(4.0) + 2 * cfg.eps_step, "telescoping_ok": run.telescoping_ok}}


def run_sweep(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    reps = transition.sweep_alpha(cfg.alphas, cfg.m_grid, cfg.lam, cfg.seed, _table(cfg),
                                  cfg.q_override or 4, threads=threads)
    header, rows = transition.regime_table(reps)
    write_csv(out / "sweep.csv", header, rows)
    summary = {f"alpha={r.alpha}": {"verdict": r.series_verdict,
                                     "lower_bounds": [r.lower_bounds.get(m, math.nan) for m in cfg.m_grid],
                                     "h0_sums": [r.tail_sums[m].value if m in r.tail_sums else math.nan
                                                 for m in cfg.m_grid],
                                     "errors": len(r.errors)} for r in reps}
    summary["note"] = transition.FOOTER
    return {"sweep": summary}


def run_selftest(cfg: ExperimentConfig, out: Path, threads: int) -> dict:
    results = selftest.run_all(cfg.criteria or None)
    write_csv(out / "selftest.csv", ["criterion", "title", "passed", "seconds", "measured"],
              [[r.number, r.title, r.passed, round(r.seconds, 3), r.line()] for r in results])
    for r in results:
        print(r.line())
    body = {f"criterion_{r.number}": {"title": r.title, "passed": r.passed} for r in results}
    body["all_passed"] = all(r.passed for r in results)
    return {"selftest": body}


RUNNERS = {"capacity": run_capacity, "audit": run_audit, "montecarlo": run_montecarlo,
           "redistribute": run_redistribute, "sweep": run_sweep, "selftest": run_selftest}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logcap", description="Logarithmic capacity experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="INI file with an [experiment] section")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for pair sums")
    p.add_argument("--seed", type=int, help="override the configured seed (unsigned 64-bit)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write_error(out: Path, exc: BaseException, field_name=None):
    lines = ["status = error", f"type = {type(exc).__name__}", f"message = {exc}"]
    if field_name:
        lines.append(f"field = {field_name}")
    for attr in ("pair", "occupancy", "last_level"):
        if hasattr(exc, attr):
            lines.append(f"{attr} = {getattr(exc, attr)}")
    cause = getattr(exc, "cause", None)
    if cause is not None:
        lines.append(f"cause = {type(cause).__name__}: {cause}")
    (out / "error.txt").write_text("\n".join(lines) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    overrides = {"command": args.command}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    try:
        if args.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        cfg = load_config(args.config, overrides) if args.config else parse_config("", overrides)
    except ConfigError as exc:
        _write_error(out, exc, exc.field)
        print(f"logcap: configuration error: {exc}", file=sys.stderr)
        return 2
    (out / "resolved_config.ini").write_text(cfg.to_ini())
    try:
        sections = RUNNERS[cfg.command](cfg, out, args.threads)
    except Exception as exc:
        _write_error(out, exc)
        write_report(out / "report.txt", {"run": {"command": cfg.command, "seed": cfg.seed}}, status="incomplete")
        print(f"logcap: {cfg.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1
    sections = {"run": {"command": cfg.command, "seed": cfg.seed, "threads": args.threads}, **sections}
    write_report(out / "report.txt", sections)
    if cfg.command == "selftest" and not sections["selftest"]["all_passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
