"""Tests for misreg.services.reporting."""

import pandas as pd
import pytest

from misreg.exceptions import InputError
from misreg.models.results import RegressionEstimate, RunConfig
from misreg.services.ingest import read_stations
from misreg.services.kriging import blp
from misreg.services.reporting import dataset_frames, emit_report, prediction_frame, write_csv


@pytest.fixture
def run_config(tmp_path) -> RunConfig:
    return RunConfig(subcommand="krig-regress", options={"bootstrap": 0}, seed=3, output_dir=str(tmp_path))


@pytest.fixture
def estimate() -> RegressionEstimate:
    return RegressionEstimate(
        method="kr-naive",
        names=["beta", "gamma_1"],
        beta_hat=[1.25],
        gamma_hat=[0.5],
        se=[0.1, 0.2],
        ci_low=[1.05, 0.1],
        ci_high=[1.45, 0.9],
        level=0.95,
        diagnostics={"inference": "naive"},
    )


class TestEmitReport:
    """Tests for report pairs."""

    def test_files_and_header(self, tmp_path, run_config, estimate):
        written = emit_report(estimate, tmp_path, "estimates", run_config, notes=["first note"])
        assert [p.name for p in written] == ["estimates.csv", "estimates.txt"]

        first_line = (tmp_path / "estimates.csv").read_text(encoding="utf-8").splitlines()[0]
        assert first_line.startswith("# run_config: ")
        assert '"subcommand":"krig-regress"' in first_line

        text = (tmp_path / "estimates.txt").read_text(encoding="utf-8")
        assert text.startswith("misreg krig-regress\n===================\n")
        assert "- first note" in text
        assert "Run configuration" in text
        assert "kr-naive" in text

    def test_byte_identical_reruns(self, tmp_path, run_config, estimate):
        emit_report(estimate, tmp_path / "a", "estimates", run_config)
        emit_report(estimate, tmp_path / "b", "estimates", run_config)
        for name in ("estimates.csv", "estimates.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_extra_tables(self, tmp_path, run_config, estimate):
        extra = {"draws": pd.DataFrame({"beta": range(60)}), "small": pd.DataFrame({"k": [1, 2]})}
        emit_report([estimate], tmp_path, "estimates", run_config, extra=extra)
        assert (tmp_path / "estimates_draws.csv").exists()
        text = (tmp_path / "estimates.txt").read_text(encoding="utf-8")
        assert "small" in text
        assert "\ndraws\n" not in text

    def test_nothing_to_report_writes_nothing(self, tmp_path, run_config):
        with pytest.raises(InputError):
            emit_report([], tmp_path / "out", "estimates", run_config)
        assert not (tmp_path / "out").exists()

    def test_float_precision(self, tmp_path, run_config):
        emit_report(pd.DataFrame({"value": [1 / 3]}), tmp_path, "table", run_config)
        assert "0.333333333333\n" in (tmp_path / "table.csv").read_text(encoding="utf-8")


class TestFrames:
    """Tests for table layouts that feed back into ingestion."""

    def test_predictions_reingest_as_stations(self, tmp_path, theta, lattice_data):
        data, _ = lattice_data
        pred = blp(theta, 0.5, data.stations, data.outcome_locs[:5])
        frame = prediction_frame(pred, [f"t{k}" for k in range(5)])
        assert list(frame.columns) == ["id", "x_km", "y_km", "value", "kvar"]
        path = write_csv(frame, tmp_path / "pred.csv")
        assert len(read_stations(path)) == 5

    def test_dataset_frames(self, lattice_data):
        data, r_out = lattice_data
        frames = dataset_frames(data, r_out)
        assert set(frames) == {"stations", "outcomes", "latent"}
        assert list(frames["outcomes"].columns) == ["id", "x_km", "y_km", "y", "ctrl_1"]
