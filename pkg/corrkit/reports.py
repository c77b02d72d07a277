from __future__ import annotations
from typing import Iterable, List
import json

from .metrics import MetricReport


def format_table(reports: Iterable[MetricReport], title: str = "") -> str:
    """Fixed-width text table: metric, value, unit, pixel count."""
    rows = [(r.name, f"{r.value:.6g}", r.unit or "-", str(r.count)) for r in reports]
    header = ("metric", "value", "unit", "count")
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = [title] if title else []
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def format_kv(reports: Iterable[MetricReport], prefix: str = "") -> str:
    """One ``name=value`` line per metric, full precision."""
    return "".join(f"{prefix}{r.name}={r.value!r}\n" for r in reports)


def to_json(reports: Iterable[MetricReport]) -> List[dict]:
    return [{"name": r.name, "value": r.value, "unit": r.unit, "count": r.count} for r in reports]


def export_json(reports: Iterable[MetricReport], path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_json(reports), f, indent=2)
