"""Aggregate per-run metric records into comparison tables."""
from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from collections import defaultdict
from pathlib import Path

log = logging.getLogger(__name__)

RECORD_NAME = "result.jsonl"
REQUIRED_KEYS = ("model", "scheme", "generator", "scale", "seed", "float_accuracy", "ptq_accuracy",
                 "accuracy", "final_accuracy")

SUMMARY_COLUMNS = ("model", "scheme", "scale", "method", "label", "n_seeds", "median", "min", "max", "delta")
ABLATION_COLUMNS = ("method", "scale", "top1", "seed_median")

# Label used in the report for each row kind.
LABELS = {"float": "float", "ptq": "A0", "human": "A1", "searched": "A2", "random": "random"}


def read_records(root) -> tuple[list[dict], list[str]]:
    """Load every run record below ``root``; corrupt ones become warnings."""
    records, warnings = [], []
    for path in sorted(Path(root).rglob(RECORD_NAME)):
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                missing = [k for k in REQUIRED_KEYS if k not in rec]
                if missing:
                    raise ValueError(f"missing keys {missing}")
                float(rec["final_accuracy"])
            except (ValueError, TypeError) as exc:
                msg = f"skipped corrupt record {path}:{lineno} ({exc})"
                log.warning(msg)
                warnings.append(msg)
                continue
            records.append(rec)
    return records, warnings


def pct(x: float) -> str:
    return f"{100 * x:.2f}"


def format_delta(delta: float) -> str:
    """Accuracy difference (fraction) as a signed percentage, e.g. ``(+0.30%)``."""
    return f"({100 * delta:+.2f}%)"


def _stats(values: list[float]) -> dict:
    return {"n_seeds": len(values), "median": statistics.median(values), "min": min(values), "max": max(values)}


def summary_rows(records: list[dict]) -> list[dict]:
    """One block of rows per (model, scheme, scale): float, A0, A1, A2 and extras."""
    groups: dict[tuple, list[dict]] = defaultdict(list)
    for rec in records:
        groups[(rec["model"], rec["scheme"], float(rec["scale"]))].append(rec)

    rows = []
    for (model, scheme, scale), recs in sorted(groups.items()):
        by_gen: dict[str, dict[int, float]] = defaultdict(dict)
        for r in recs:
            by_gen[r["generator"]][r["seed"]] = r["final_accuracy"]
        float_acc = {r["seed"]: r["float_accuracy"] for r in recs}
        ptq_source = [r for r in recs if r["generator"] == "human"] or recs
        ptq = {r["seed"]: r["ptq_accuracy"] for r in ptq_source if r["ptq_accuracy"] is not None}

        blocks = [("float", list(float_acc.values())), ("ptq", list(ptq.values()))]
        blocks += [(g, list(by_gen[g].values())) for g in ("human", "searched", "random") if g in by_gen]
        medians = {}
        for method, values in blocks:
            if not values:
                continue
            st = _stats(values)
            medians[method] = st["median"]
            row = {"model": model, "scheme": scheme, "scale": scale, "method": method,
                   "label": LABELS[method], **st, "delta": ""}
            if method == "searched" and "human" in medians:
                row["delta"] = format_delta(st["median"] - medians["human"])
            rows.append(row)
    return rows


def ablation_rows(records: list[dict], scales: list[float], model: str, scheme: str) -> list[dict]:
    """Rows ``{method, scale, top1, seed_median}`` for the searched and human generators.

    ``top1`` is the mean over seeds, ``seed_median`` the median, both in percent.
    """
    rows = []
    for method in ("searched", "human"):
        for s in scales:
            values = [r["final_accuracy"] for r in records
                      if r["generator"] == method and float(r["scale"]) == float(s)
                      and r["model"] == model and r["scheme"] == scheme]
            if not values:
                continue
            rows.append({"method": method, "scale": float(s),
                         "top1": round(100 * statistics.fmean(values), 2),
                         "seed_median": round(100 * statistics.median(values), 2)})
    return rows


def _display(row: dict, columns) -> dict:
    out = {}
    for c in columns:
        v = row[c]
        out[c] = pct(v) if c in ("median", "min", "max") else v
    return out


def to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(_display(row, columns))
    return buf.getvalue()


def render_summary(rows: list[dict], warnings: list[str]) -> str:
    """CSV table followed by one ``# warning:`` line per skipped record."""
    text = to_csv(rows, SUMMARY_COLUMNS)
    for w in warnings:
        text += f"# warning: {w}\n"
    return text
