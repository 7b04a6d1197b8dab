"""Report figures.  Uses the Agg backend and strips PNG metadata so reruns are byte-identical."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}
COLUMNS = ("total", "problematic", "safety-critical", "performance")


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def counts_figure(rows: Dict[str, Dict[str, int]], path: Path) -> None:
    """Grouped bars: one group per row (base, perturbed), one bar per count column."""
    names = list(rows)
    x = np.arange(len(COLUMNS))
    width = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for i, name in enumerate(names):
        vals = [rows[name][c] for c in COLUMNS]
        bars = ax.bar(x + (i - (len(names) - 1) / 2) * width, vals, width, label=name)
        ax.bar_label(bars, fontsize=8)
    ax.set_xticks(x, COLUMNS)
    ax.set_ylabel("scenarios")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def kpi_figure(kpi_counts: Dict[str, Dict[str, int]], kpis: Sequence[str], path: Path) -> None:
    """Violations per KPI for each scenario set."""
    names = list(kpi_counts)
    y = np.arange(len(kpis))
    height = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for i, name in enumerate(names):
        ax.barh(y + (i - (len(names) - 1) / 2) * height, [kpi_counts[name].get(k, 0) for k in kpis], height, label=name)
    ax.set_yticks(y, kpis)
    ax.invert_yaxis()
    ax.set_xlabel("scenarios violating")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
