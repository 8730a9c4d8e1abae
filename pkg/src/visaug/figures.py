"""Render report data to figure files next to the delimited output.

Per-category grouped bars (one group per category, one bar per variant) and
a failure-mode pie, both driven purely by the report dict from evalkit so
the data path stays plot-free.
"""

from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_VARIANT_COLORS = ["#d9534f", "#5cb85c", "#428bca", "#f0ad4e", "#9b59b6"]
_MODE_COLORS = {
    "execution": "#d9534f",
    "vlm_selection": "#428bca",
    "masking": "#f0ad4e",
    "combined": "#5cb85c",
}


def render_category_bars(report: dict, out_dir) -> List[Path]:
    """One bar chart per setting: percent of maximum points by category and variant."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: List[Path] = []
    rows = report.get("rows", [])
    settings = sorted({r["setting"] for r in rows})
    for setting in settings:
        sub = [r for r in rows if r["setting"] == setting]
        categories = sorted({r["category"] for r in sub}, key=str)
        variants = sorted({r["variant"] for r in sub})
        fig, ax = plt.subplots(figsize=(6, 3.2))
        width = 0.8 / max(len(variants), 1)
        for vi, variant in enumerate(variants):
            xs, ys = [], []
            for ci, cat in enumerate(categories):
                match = [r for r in sub if r["variant"] == variant and r["category"] == cat]
                xs.append(ci + vi * width)
                ys.append(match[0]["percent"] if match else 0)
            bars = ax.bar(xs, ys, width=width, label=variant,
                          color=_VARIANT_COLORS[vi % len(_VARIANT_COLORS)])
            ax.bar_label(bars, fontsize=8)
        ax.set_xticks([i + width * (len(variants) - 1) / 2 for i in range(len(categories))])
        ax.set_xticklabels([f"Cat{c}" if c != "" else "all" for c in categories])
        ax.set_ylim(0, 100)
        ax.set_ylabel("% of max points")
        ax.set_title(setting)
        ax.legend(fontsize=8)
        ax.grid(axis="y", linestyle="--", alpha=0.4)
        fig.tight_layout()
        path = out / f"scores_{setting}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def render_failure_pie(report: dict, out_dir) -> Path | None:
    counts = report.get("failure_modes", {}).get("counts", {})
    total = sum(counts.values())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if total == 0:
        return None
    labels = [m for m, n in counts.items() if n > 0]
    sizes = [counts[m] for m in labels]
    colors = [_MODE_COLORS.get(m, "#999999") for m in labels]
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    ax.pie(sizes, labels=labels, colors=colors, autopct="%1.0f%%", startangle=90)
    ax.set_title("failure modes")
    fig.tight_layout()
    path = out / "failure_modes.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_all(report: dict, out_dir) -> List[Path]:
    paths = render_category_bars(report, out_dir)
    pie = render_failure_pie(report, out_dir)
    if pie is not None:
        paths.append(pie)
    return paths
