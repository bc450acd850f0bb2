"""Benchmark MSE figures: per-algorithm curves with +-1 std bands, one
panel pair (raw iterates / tail-averaged iterates) per dataset x local-step
count."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .io import MseSeries, discover_benchmark_cells, read_mse_csv

PANEL_KINDS = ("iterates", "averaged")

ALG_COLORS = {
    "fedavg": "tab:blue",
    "fedavg_det": "tab:cyan",
    "rr_gamma": "tab:orange",
    "rr_h": "tab:red",
    "scaffold": "tab:green",
}

ALG_LABELS = {
    "fedavg": "FedAvg",
    "fedavg_det": "FedAvg (exact gradients)",
    "rr_gamma": "FedAvg + step-size extrapolation",
    "rr_h": "FedAvg + local-step extrapolation",
    "scaffold": "SCAFFOLD",
}


@dataclass(frozen=True)
class PlotSpec:
    """What to render: either a benchmark run directory (8-panel grid) or a
    list of standalone mse.csv paths (one panel pair per file)."""

    out_path: str
    run_dir: Optional[str] = None
    csv_paths: Sequence[str] = field(default_factory=tuple)
    panels: str = "both"          # iterates | averaged | both
    log_y: bool = True
    log_x: bool = False

    def __post_init__(self):
        if (self.run_dir is None) == (not self.csv_paths):
            raise ValueError("exactly one of run_dir / csv_paths must be given")
        if self.panels not in PANEL_KINDS + ("both",):
            raise ValueError(f"panels must be one of {PANEL_KINDS + ('both',)}")


def _draw_panel(ax, series_map: dict, kind: str, log_y: bool, log_x: bool):
    for alg in sorted(series_map):
        s: MseSeries = series_map[alg]
        y = s.mse if kind == "iterates" else s.mse_avg
        std = s.mse_std if kind == "iterates" else s.mse_avg_std
        color = ALG_COLORS.get(alg, None)
        ax.plot(s.t, y, label=ALG_LABELS.get(alg, alg), color=color, lw=1.3)
        if s.has_band:
            lo = y - std
            if log_y:
                lo = lo.clip(min=y.min() * 1e-3 + 1e-300)
            ax.fill_between(s.t, lo, y + std, alpha=0.25, color=color, lw=0)
    if log_y:
        ax.set_yscale("log")
    if log_x:
        ax.set_xscale("log")
    ax.set_xlabel("communication round")
    ax.set_ylabel("mean squared error")


def plot_mse(spec: PlotSpec) -> dict:
    """Render the figure; returns {'out': path, 'n_panels': int,
    'algorithms': sorted list} for downstream checks."""
    kinds = PANEL_KINDS if spec.panels == "both" else (spec.panels,)
    algorithms: set = set()
    if spec.run_dir is not None:
        cells = discover_benchmark_cells(spec.run_dir)
        datasets = sorted({ds for ds, _ in cells})
        hs = sorted({h for _, h in cells})
        n_rows = len(datasets)
        n_cols = len(hs) * len(kinds)
        fig, axes = plt.subplots(n_rows, n_cols,
                                 figsize=(3.4 * n_cols, 2.9 * n_rows),
                                 squeeze=False)
        for i, ds in enumerate(datasets):
            for j, h in enumerate(hs):
                series_map = cells[(ds, h)]
                algorithms.update(series_map)
                for k, kind in enumerate(kinds):
                    ax = axes[i][j * len(kinds) + k]
                    _draw_panel(ax, series_map, kind, spec.log_y, spec.log_x)
                    ax.set_title(f"{ds} - {kind} - H={h}", fontsize=9)
        n_panels = n_rows * n_cols
    else:
        n_cols = len(kinds)
        n_rows = len(spec.csv_paths)
        fig, axes = plt.subplots(n_rows, n_cols,
                                 figsize=(3.4 * n_cols, 2.9 * n_rows),
                                 squeeze=False)
        for i, path in enumerate(spec.csv_paths):
            series_map = {s.algorithm: s for s in read_mse_csv(path)}
            algorithms.update(series_map)
            for k, kind in enumerate(kinds):
                _draw_panel(axes[i][k], series_map, kind, spec.log_y, spec.log_x)
                axes[i][k].set_title(f"{Path(path).parent.name} - {kind}", fontsize=9)
        n_panels = n_rows * n_cols
    handles, labels = axes[0][0].get_legend_handles_labels()
    fig.legend(handles, labels, loc="lower center", ncol=min(len(labels), 4),
               fontsize=9, frameon=False)
    fig.tight_layout(rect=(0, 0.06, 1, 1))
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=140)
    plt.close(fig)
    return {"out": str(out), "n_panels": n_panels, "algorithms": sorted(algorithms)}
