"""Static figures written next to the tables."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {"searched": ("tab:blue", "o"), "human": ("tab:orange", "s"), "random": ("tab:gray", "^")}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # Fixed metadata keeps reruns byte-stable.
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_accuracy_vs_scale(rows: list[dict], path, title: str = "") -> Path:
    """Median top-1 against channel scale, one line per generator."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for method in ("searched", "human"):
        pts = sorted((r["scale"], r["seed_median"]) for r in rows if r["method"] == method)
        if not pts:
            continue
        color, marker = STYLE[method]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=marker, color=color, label=method)
    ax.set_xscale("log", base=2)
    scales = sorted({r["scale"] for r in rows})
    ax.set_xticks(scales)
    ax.set_xticklabels([f"{s:g}" for s in scales])
    ax.set_xlabel("channel scale s")
    ax.set_ylabel("top-1 (%)")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_summary(rows: list[dict], path) -> Path:
    """Bars of median accuracy with min/max whiskers per (model, scheme, scale) group."""
    groups = sorted({(r["model"], r["scheme"], r["scale"]) for r in rows})
    fig, axes = plt.subplots(1, len(groups), figsize=(3.2 * len(groups), 3.2), squeeze=False)
    for ax, key in zip(axes[0], groups):
        sub = [r for r in rows if (r["model"], r["scheme"], r["scale"]) == key]
        med = [100 * r["median"] for r in sub]
        err = [[100 * (r["median"] - r["min"]) for r in sub], [100 * (r["max"] - r["median"]) for r in sub]]
        ax.bar(range(len(sub)), med, yerr=err, color="tab:blue", alpha=0.8, capsize=3)
        ax.set_xticks(range(len(sub)))
        ax.set_xticklabels([r["label"] for r in sub])
        lo = min(100 * r["min"] for r in sub)
        ax.set_ylim(max(0, lo - 2), min(100, max(100 * r["max"] for r in sub) + 1))
        ax.set_title(f"{key[0]} {key[1]} s={key[2]:g}", fontsize=9)
        ax.set_ylabel("top-1 (%)")
    return _save(fig, path)
