"""Schema-checked readers for the simulation lab's CSV/manifest outputs.

The plotting layer never recomputes anything: it consumes `mse.csv` /
`slope.csv` files plus their `manifest.json` sidecars, and refuses inputs
whose schema does not match exactly (columns are never silently dropped or
invented).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CSV_SCHEMA = "fedbias-csv/1"

MSE_COLUMNS = ["t", "mse", "mse_std", "mse_avg", "mse_avg_std", "algorithm"]
SLOPE_COLUMNS = ["gamma", "residual_norm"]


class SchemaError(ValueError):
    """Input file does not conform to the versioned CSV schema."""


@dataclass(frozen=True)
class MseSeries:
    algorithm: str
    t: np.ndarray
    mse: np.ndarray
    mse_std: np.ndarray
    mse_avg: np.ndarray
    mse_avg_std: np.ndarray

    @property
    def has_band(self) -> bool:
        return bool(np.any(self.mse_std > 0))


def check_manifest(run_dir: Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise SchemaError(f"missing manifest.json in {run_dir}")
    doc = json.loads(path.read_text())
    schema = doc.get("csv_schema")
    if schema != CSV_SCHEMA:
        raise SchemaError(
            f"{path}: csv schema {schema!r} is not the supported {CSV_SCHEMA!r}")
    return doc


def _read_rows(path: Path, columns) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header != columns:
            raise SchemaError(
                f"{path}: header {header} does not match the schema {columns}")
        rows = [dict(zip(columns, row)) for row in reader]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def read_mse_csv(path) -> list[MseSeries]:
    """Parse an mse.csv into one series per algorithm block."""
    rows = _read_rows(Path(path), MSE_COLUMNS)
    by_alg: dict[str, list[dict]] = {}
    for row in rows:
        by_alg.setdefault(row["algorithm"], []).append(row)
    out = []
    for alg, block in by_alg.items():
        out.append(MseSeries(
            algorithm=alg,
            t=np.array([int(r["t"]) for r in block]),
            mse=np.array([float(r["mse"]) for r in block]),
            mse_std=np.array([float(r["mse_std"]) for r in block]),
            mse_avg=np.array([float(r["mse_avg"]) for r in block]),
            mse_avg_std=np.array([float(r["mse_avg_std"]) for r in block]),
        ))
    return out


def read_slope_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = _read_rows(Path(path), SLOPE_COLUMNS)
    gammas = np.array([float(r["gamma"]) for r in rows])
    resid = np.array([float(r["residual_norm"]) for r in rows])
    if np.any(gammas <= 0) or np.any(resid < 0):
        raise SchemaError(f"{path}: gammas must be positive, residuals nonnegative")
    return gammas, resid


def discover_benchmark_cells(run_dir) -> dict:
    """Map {(dataset, h_local): {algorithm: MseSeries}} from a benchmark
    matrix directory (one subdirectory per cell, each with manifest + csv)."""
    run_dir = Path(run_dir)
    check_manifest(run_dir)
    cells: dict = {}
    for sub in sorted(p for p in run_dir.iterdir() if p.is_dir()):
        manifest = check_manifest(sub)
        params = manifest.get("params", {})
        dataset, h_local = params.get("dataset"), params.get("h_local")
        if dataset is None or h_local is None:
            raise SchemaError(f"{sub}: cell manifest lacks dataset/h_local")
        for series in read_mse_csv(sub / "mse.csv"):
            cells.setdefault((dataset, int(h_local)), {})[series.algorithm] = series
    if not cells:
        raise SchemaError(f"{run_dir}: no benchmark cells found")
    return cells
