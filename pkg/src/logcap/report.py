"""Key-value text reports and comma-separated tables."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _flatten(prefix: str, obj, out: list):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    else:
        out.append((prefix, _fmt(obj)))


def format_report(sections: dict, status: str = "complete") -> str:
    """Sections of nested dicts as ``[section]`` blocks of ``key = value`` lines."""
    lines = [f"status = {status}", ""]
    for name, body in sections.items():
        lines.append(f"[{name}]")
        rows: list = []
        _flatten("", body, rows)
        width = max((len(k) for k, _ in rows), default=0)
        lines.extend(f"{k.ljust(width)} = {v}" for k, v in rows)
        lines.append("")
    return "\n".join(lines)


def write_report(path, sections: dict, status: str = "complete"):
    Path(path).write_text(format_report(sections, status))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) if isinstance(x, (float, np.floating, bool, np.bool_)) else x for x in r])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
