"""Bench report rows, summary tables and the cache-model comparison."""

from __future__ import annotations

import json
import math

from ..planner import io_reduction

# columns that do not depend on the machine, and those that do
STABLE_COLUMNS = ("recall", "mean_ios", "mean_search_reads", "mean_refinement_reads",
                  "mean_visited", "mean_packed_hits", "hit_rate")
TIMING_COLUMNS = ("qps", "lat_mean_us", "lat_p50_us", "lat_p99_us")
CONFIG_COLUMNS = ("layout_kind", "engine", "D", "sigma", "beam_width", "cache_fraction",
                  "threads", "io_mode")

ANALYZE_REQUIRED = ("layout_kind", "engine", "D", "sigma", "beam_width", "cache_fraction",
                    "hit_rate", "mean_ios")
DEVIATION_LIMIT = 0.25


class ReportError(ValueError):
    pass


def make_row(config: dict, metrics: dict) -> dict:
    """One report record: ``config`` must echo everything needed to re-run the point."""
    row = dict(config)
    row.update(metrics)
    if not 0.0 <= row["recall"] <= 1.0:
        raise ReportError(f"recall out of range: {row['recall']}")
    if row["mean_ios"] < 0:
        raise ReportError("negative IO count")
    return row


def write_jsonl(rows, path):
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path):
    rows = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ReportError(f"{path}:{n}: not a JSON record ({e})") from e
    return rows


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.4g}"
    return "-" if v is None else str(v)


def table(rows, columns) -> str:
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(x[i]) for x in cells]) for i, c in enumerate(columns)]
    line = lambda xs: "  ".join(x.rjust(w) for x, w in zip(xs, widths))  # noqa: E731
    out = [line(columns), line(["-" * w for w in widths])]
    out += [line(x) for x in cells]
    return "\n".join(out)


def summary(rows) -> str:
    """Two tables: machine-independent columns first, timings after."""
    cfg = [c for c in CONFIG_COLUMNS if any(c in r for r in rows)]
    return ("IO and accuracy (machine-independent)\n" + table(rows, cfg + list(STABLE_COLUMNS))
            + "\n\nTiming (machine-dependent)\n" + table(rows, cfg + list(TIMING_COLUMNS)))


def _group_key(r):
    return (r["layout_kind"], r["engine"], r["D"], r["sigma"], r["beam_width"],
            r.get("k", 10), r.get("use_nav", False))


def analyze(rows, limit=DEVIATION_LIMIT):
    """Measured IO reduction against the cache model, per cache-sweep point.

    Each group (same layout, engine, D, sigma, W) needs a cache_fraction=0 row, whose
    mean IO is the uncached reference. Returns (records, flagged count).
    """
    for i, r in enumerate(rows):
        missing = [f for f in ANALYZE_REQUIRED if f not in r]
        if missing:
            raise ReportError(f"record {i} is missing fields: {', '.join(missing)}")
    groups = {}
    for r in rows:
        groups.setdefault(_group_key(r), []).append(r)
    out, flagged = [], 0
    for key, rs in groups.items():
        base = [r for r in rs if not r["cache_fraction"]]
        if not base:
            raise ReportError(f"group {key} has no cache_fraction=0 reference row")
        t0 = base[0]["mean_ios"]
        for r in sorted(rs, key=lambda r: r["cache_fraction"]):
            beta = r["hit_rate"]
            predicted = io_reduction(beta, r["sigma"])
            measured = (t0 - r["mean_ios"]) / t0 if t0 else 0.0
            if predicted > 0:
                dev = abs(measured - predicted) / predicted
            else:
                dev = abs(measured)
            flag = dev > limit
            flagged += flag
            out.append({"layout_kind": key[0], "engine": key[1], "D": key[2], "sigma": key[3],
                        "beam_width": key[4], "cache_fraction": r["cache_fraction"],
                        "hit_rate": beta, "predicted": predicted, "measured": measured,
                        "deviation": dev, "flag": "DEVIATES" if flag else "ok"})
    return out, flagged


def analyze_table(records) -> str:
    cols = ["layout_kind", "D", "sigma", "beam_width", "cache_fraction", "hit_rate",
            "predicted", "measured", "deviation", "flag"]
    return table(records, cols)
