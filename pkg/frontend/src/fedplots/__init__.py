"""Rendering of fedbias CSV outputs (read-only; no recomputation)."""

__version__ = "0.1.0"

from .io import MseSeries, SchemaError, read_mse_csv, read_slope_csv
from .mse import PlotSpec, plot_mse
from .slope import fit_slope, plot_slope

__all__ = [
    "MseSeries",
    "PlotSpec",
    "SchemaError",
    "fit_slope",
    "plot_mse",
    "plot_slope",
    "read_mse_csv",
    "read_slope_csv",
    "__version__",
]
