import json

import numpy as np
import pytest

from fedplots.io import (
    CSV_SCHEMA,
    SchemaError,
    check_manifest,
    discover_benchmark_cells,
    read_mse_csv,
    read_slope_csv,
)

MSE_HEADER = "t,mse,mse_std,mse_avg,mse_avg_std,algorithm"


def write_mse(path, algorithm="fedavg", rows=5, std=0.1):
    lines = [MSE_HEADER]
    for t in range(rows):
        mse = 1.0 / (t + 1)
        lines.append(f"{t},{mse},{std},{mse},{std},{algorithm}")
    path.write_text("\n".join(lines) + "\n")


def write_manifest(dirpath, params=None):
    doc = {"tool": "fedbias", "csv_schema": CSV_SCHEMA, "params": params or {}}
    (dirpath / "manifest.json").write_text(json.dumps(doc))


def test_read_mse_groups_by_algorithm(tmp_path):
    path = tmp_path / "mse.csv"
    lines = [MSE_HEADER]
    for alg in ("fedavg", "scaffold"):
        for t in range(3):
            lines.append(f"{t},{0.5},{0.0},{0.5},{0.0},{alg}")
    path.write_text("\n".join(lines) + "\n")
    series = read_mse_csv(path)
    assert sorted(s.algorithm for s in series) == ["fedavg", "scaffold"]
    assert all(len(s.t) == 3 for s in series)
    assert not series[0].has_band  # zero std: band suppressed


def test_rejects_header_mismatch(tmp_path):
    path = tmp_path / "mse.csv"
    path.write_text("t,mse,algorithm\n0,1.0,fedavg\n")
    with pytest.raises(SchemaError):
        read_mse_csv(path)


def test_rejects_extra_columns(tmp_path):
    # never silently drop columns
    path = tmp_path / "mse.csv"
    path.write_text(MSE_HEADER + ",extra\n0,1,0,1,0,fedavg,9\n")
    with pytest.raises(SchemaError):
        read_mse_csv(path)


def test_rejects_empty_file(tmp_path):
    path = tmp_path / "mse.csv"
    path.write_text("")
    with pytest.raises(SchemaError):
        read_mse_csv(path)


def test_manifest_schema_gate(tmp_path):
    with pytest.raises(SchemaError):
        check_manifest(tmp_path)  # missing
    (tmp_path / "manifest.json").write_text(json.dumps({"csv_schema": "other/9"}))
    with pytest.raises(SchemaError):
        check_manifest(tmp_path)
    write_manifest(tmp_path)
    assert check_manifest(tmp_path)["csv_schema"] == CSV_SCHEMA


def test_slope_reader(tmp_path):
    path = tmp_path / "slope.csv"
    path.write_text("gamma,residual_norm\n0.02,4e-4\n0.01,1e-4\n0.005,2.5e-5\n")
    g, r = read_slope_csv(path)
    assert np.allclose(g, [0.02, 0.01, 0.005])
    assert np.allclose(r, [4e-4, 1e-4, 2.5e-5])


def test_slope_rejects_nonpositive_gamma(tmp_path):
    path = tmp_path / "slope.csv"
    path.write_text("gamma,residual_norm\n0.0,1e-4\n0.01,1e-4\n0.005,1e-4\n")
    with pytest.raises(SchemaError):
        read_slope_csv(path)


def test_discover_cells(tmp_path):
    write_manifest(tmp_path)
    for ds in ("noisy", "heterogeneous"):
        for h in (10, 100):
            cell = tmp_path / f"{ds}_H{h}_fedavg"
            cell.mkdir()
            write_manifest(cell, {"dataset": ds, "h_local": h, "algorithm": "fedavg"})
            write_mse(cell / "mse.csv")
    cells = discover_benchmark_cells(tmp_path)
    assert set(cells) == {("noisy", 10), ("noisy", 100),
                          ("heterogeneous", 10), ("heterogeneous", 100)}
