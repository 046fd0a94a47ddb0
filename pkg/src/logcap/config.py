"""Experiment configuration: one ``[experiment]`` section of ``key = value`` lines.

Every known key has a default; the resolved file written next to the
results lists all of them, so replaying it reproduces the run.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

SECTION = "experiment"
COMMANDS = ("capacity", "audit", "montecarlo", "redistribute", "sweep", "selftest")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _floats(s: str) -> list[float]:
    return [float(x) for x in s.replace(";", ",").split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.replace(";", ",").split(",") if x.strip()]


def _intervals(s: str) -> list[tuple[float, float]]:
    out = []
    for part in s.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        lo, hi = part.split(":")
        out.append((float(lo), float(hi)))
    return out


@dataclass
class ExperimentConfig:
    command: str = "capacity"
    lam: float = 1.0
    alpha: float = 1.0
    alphas: list = field(default_factory=lambda: [0.8, 1.0, 1.25, 1.5])
    seed: int = 20240601
    density: str = "uniform"
    n: int = 4096
    n_grid: list = field(default_factory=lambda: [8, 16, 32])
    m_grid: list = field(default_factory=lambda: [64, 256, 1024])
    q: int = 0
    intervals: list = field(default_factory=lambda: [(0.0, 1.0)])
    panels: list = field(default_factory=lambda: [250, 500, 1000, 2000])
    eps_log_spacing: float = 0.05
    eps_gap: float = 0.5
    eps_step: float = 0.3
    eps_tail: float = 0.1
    eps_moment: float = 0.1
    delta: float = 0.1
    delta_clip: float = 0.05
    stages: int = 0
    m_min: int = 64
    trials: int = 10000
    criteria: list = field(default_factory=list)

    # config-file key -> attribute
    KEYS = {"lambda": "lam"}

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError("command", f"unknown command {self.command!r}")
        for name in ("lam", "alpha", "eps_log_spacing", "eps_gap", "eps_step", "eps_tail", "eps_moment",
                     "delta", "delta_clip"):
            if not getattr(self, name) > 0:
                raise ConfigError(_key(name), "must be positive")
        if not self.delta_clip < 0.5:
            raise ConfigError("delta_clip", "must be below 1/2")
        if any(not a > 0 for a in self.alphas):
            raise ConfigError("alphas", "all values must be positive")
        for name in ("n", "m_min", "trials"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.q < 0 or self.stages < 0:
            raise ConfigError("q" if self.q < 0 else "stages", "must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        for name in ("n_grid", "m_grid", "panels"):
            vals = getattr(self, name)
            if not vals or any(v < 1 for v in vals) or vals != sorted(set(vals)):
                raise ConfigError(name, "must be a strictly increasing list of positive integers")
        for lo, hi in self.intervals:
            if not 0.0 <= lo < hi <= 1.0:
                raise ConfigError("intervals", f"[{lo}, {hi}] is not a subinterval of [0, 1]")
        if self.density != "uniform" and not Path(self.density).is_file():
            raise ConfigError("density", f"no such density table {self.density!r}")
        return self

    @property
    def q_override(self):
        return self.q or None

    def to_ini(self) -> str:
        lines = [f"[{SECTION}]"]
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "intervals":
                s = ", ".join(f"{lo!r}:{hi!r}" for lo, hi in v)
            elif isinstance(v, list):
                s = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{_key(f.name)} = {s}")
        return "\n".join(lines) + "\n"


def _key(attr: str) -> str:
    for k, a in ExperimentConfig.KEYS.items():
        if a == attr:
            return k
    return attr


_PARSERS = {
    "command": str, "lam": float, "alpha": float, "alphas": _floats, "seed": int, "density": str,
    "n": int, "n_grid": _ints, "m_grid": _ints, "q": int, "intervals": _intervals, "panels": _ints,
    "eps_log_spacing": float, "eps_gap": float, "eps_step": float, "eps_tail": float, "eps_moment": float,
    "delta": float, "delta_clip": float, "stages": int, "m_min": int, "trials": int, "criteria": _ints,
}


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc)) from exc
    extra = [s for s in cp.sections() if s != SECTION]
    if extra:
        raise ConfigError(extra[0], "unknown section")
    cfg = ExperimentConfig()
    items = dict(cp.items(SECTION)) if cp.has_section(SECTION) else {}
    items.update(overrides or {})
    for key, raw in items.items():
        attr = ExperimentConfig.KEYS.get(key, key)
        if attr not in _PARSERS:
            raise ConfigError(key, "unknown key")
        try:
            val = _PARSERS[attr](raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(key, f"cannot parse {raw!r}: {exc}") from exc
        setattr(cfg, attr, val)
    return cfg.validate()


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), overrides)
