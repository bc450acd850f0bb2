import json

import numpy as np
import pytest

from fedplots.io import CSV_SCHEMA
from fedplots.mse import PlotSpec, plot_mse
from fedplots.slope import fit_slope, plot_slope

MSE_HEADER = "t,mse,mse_std,mse_avg,mse_avg_std,algorithm"


def write_cell(root, dataset, h, algorithms, rows=6, std=0.05):
    for alg in algorithms:
        cell = root / f"{dataset}_H{h}_{alg}"
        cell.mkdir(parents=True, exist_ok=True)
        (cell / "manifest.json").write_text(json.dumps(
            {"csv_schema": CSV_SCHEMA,
             "params": {"dataset": dataset, "h_local": h, "algorithm": alg}}))
        lines = [MSE_HEADER]
        for t in range(rows):
            mse = 1.0 / (t + 1)
            lines.append(f"{t},{mse:.6g},{std},{mse / 2:.6g},{std / 2},{alg}")
        (cell / "mse.csv").write_text("\n".join(lines) + "\n")


def write_top_manifest(root):
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(json.dumps({"csv_schema": CSV_SCHEMA}))


class TestPlotMse:
    def test_single_csv_single_curve(self, tmp_path):
        write_top_manifest(tmp_path / "run")
        write_cell(tmp_path / "run", "noisy", 10, ["fedavg"])
        csv = tmp_path / "run" / "noisy_H10_fedavg" / "mse.csv"
        out = plot_mse(PlotSpec(out_path=str(tmp_path / "fig.png"),
                                csv_paths=(str(csv),), panels="iterates"))
        assert out["n_panels"] == 1 and out["algorithms"] == ["fedavg"]
        assert (tmp_path / "fig.png").stat().st_size > 0

    def test_benchmark_grid_is_eight_panels(self, tmp_path):
        run = tmp_path / "run"
        write_top_manifest(run)
        for ds in ("noisy", "heterogeneous"):
            for h in (10, 100):
                write_cell(run, ds, h, ["fedavg", "rr_gamma", "scaffold"])
        out = plot_mse(PlotSpec(out_path=str(tmp_path / "grid.png"),
                                run_dir=str(run)))
        assert out["n_panels"] == 8
        assert out["algorithms"] == ["fedavg", "rr_gamma", "scaffold"]

    def test_zero_std_renders_without_band(self, tmp_path):
        run = tmp_path / "run"
        write_top_manifest(run)
        write_cell(run, "noisy", 10, ["fedavg"], std=0.0)
        out = plot_mse(PlotSpec(out_path=str(tmp_path / "f.png"), run_dir=str(run)))
        assert out["n_panels"] == 2

    def test_schema_mismatch_is_descriptive(self, tmp_path):
        run = tmp_path / "run"
        write_top_manifest(run)
        cell = run / "noisy_H10_fedavg"
        cell.mkdir()
        (cell / "manifest.json").write_text(json.dumps(
            {"csv_schema": CSV_SCHEMA, "params": {"dataset": "noisy", "h_local": 10}}))
        (cell / "mse.csv").write_text("bogus,header\n1,2\n")
        from fedplots.io import SchemaError
        with pytest.raises(SchemaError):
            plot_mse(PlotSpec(out_path=str(tmp_path / "f.png"), run_dir=str(run)))

    def test_spec_validation(self, tmp_path):
        with pytest.raises(ValueError):
            PlotSpec(out_path="x.png")  # neither source given
        with pytest.raises(ValueError):
            PlotSpec(out_path="x.png", run_dir="a", csv_paths=("b",))

    def test_deterministic_bytes(self, tmp_path):
        run = tmp_path / "run"
        write_top_manifest(run)
        write_cell(run, "noisy", 10, ["fedavg", "scaffold"])
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        plot_mse(PlotSpec(out_path=str(a), run_dir=str(run)))
        plot_mse(PlotSpec(out_path=str(b), run_dir=str(run)))
        assert a.read_bytes() == b.read_bytes()


class TestPlotSlope:
    def test_exact_slope_two_annotation(self, tmp_path):
        csv = tmp_path / "slope.csv"
        gammas = [0.02, 0.01, 0.005, 0.0025]
        lines = ["gamma,residual_norm"] + [f"{g},{3.0 * g**2:.12g}" for g in gammas]
        csv.write_text("\n".join(lines) + "\n")
        out = plot_slope(csv, tmp_path / "slope.png")
        assert out["annotation"] == "slope = 2.00 ± 0.00"
        assert (tmp_path / "slope.png").stat().st_size > 0

    def test_refuses_fewer_than_three_points(self, tmp_path):
        csv = tmp_path / "slope.csv"
        csv.write_text("gamma,residual_norm\n0.02,1e-4\n0.01,2.5e-5\n")
        with pytest.raises(ValueError):
            plot_slope(csv, tmp_path / "slope.png")

    def test_fit_slope_recovers_noise_free_exponent(self):
        gammas = np.array([0.04, 0.02, 0.01])
        slope, stderr = fit_slope(gammas, 5 * gammas**1.5)
        assert abs(slope - 1.5) < 1e-12 and stderr < 1e-10
