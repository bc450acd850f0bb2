"""Log-log residual-scaling figures with a fitted-slope annotation."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import read_slope_csv


def fit_slope(gammas, residuals):
    """Least-squares slope of log(residual) vs log(gamma) and its standard
    error; needs at least three points."""
    gammas = np.asarray(gammas, dtype=float)
    residuals = np.asarray(residuals, dtype=float)
    if gammas.size < 3:
        raise ValueError("slope fit needs at least 3 points")
    if np.any(residuals <= 0):
        raise ValueError("residuals must be positive for a log-log fit")
    x, y = np.log(gammas), np.log(residuals)
    coeffs, cov = np.polyfit(x, y, 1, cov=True)
    return float(coeffs[0]), float(np.sqrt(cov[0, 0]))


def plot_slope(csv_path, out_path) -> dict:
    """Render residual-vs-gamma on log axes with the fitted slope annotated
    as 'slope = a.bc +- d.ef'; returns the fit for downstream checks."""
    gammas, resid = read_slope_csv(csv_path)
    slope, stderr = fit_slope(gammas, resid)
    fig, ax = plt.subplots(figsize=(4.2, 3.4))
    ax.loglog(gammas, resid, "o-", color="tab:blue", label="measured residual")
    anchor = resid[0] * (gammas / gammas[0]) ** slope
    ax.loglog(gammas, anchor, "--", color="tab:gray", lw=1,
              label=f"slope = {slope:.2f} ± {stderr:.2f}")
    ax.set_xlabel("step size")
    ax.set_ylabel("residual norm")
    ax.legend(fontsize=9, frameon=False)
    annotation = f"slope = {slope:.2f} ± {stderr:.2f}"
    ax.set_title(annotation, fontsize=10)
    fig.tight_layout()
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=140)
    plt.close(fig)
    return {"out": str(out), "slope": slope, "stderr": stderr,
            "annotation": annotation}
