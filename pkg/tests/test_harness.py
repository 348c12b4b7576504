"""Tests for misreg.services.harness."""

import numpy as np
import pytest

from misreg.config import settings
from misreg.exceptions import InputError, NumericalError
from misreg.models.covariance import CovParams, RegressionParams
from misreg.models.data import AlignedDataset, SimConfig
from misreg.models.results import EstimatorOptions, RegressionEstimate
from misreg.services.fieldsim import simulate_aligned
from misreg.services.geometry import make_lattice
from misreg.services.harness import (
    _aggregate,
    check_methods,
    checkerboard_split,
    crossval_experiment,
    full_data_gls,
    half_split,
    lattice_experiment,
    run_methods,
    summarize,
)
from misreg.utils.helpers import derive_rng


def fake_estimate(beta: float, se: float = 0.1) -> RegressionEstimate:
    return RegressionEstimate(
        method="fake",
        names=["beta"],
        beta_hat=[beta],
        se=[se],
        ci_low=[beta - 2 * se],
        ci_high=[beta + 2 * se],
        level=0.95,
        diagnostics={"inference": "naive"},
    )


@pytest.fixture
def aligned() -> AlignedDataset:
    cfg = SimConfig(
        seed=5,
        theta=CovParams(sill=1.0, range_km=2.0),
        reg=RegressionParams(beta=[2.0], gamma=[1.0]),
        error_model={"sigma2": 0.05},
    )
    return simulate_aligned(cfg, make_lattice(6))


class TestMethods:
    """Tests for method selection."""

    def test_empty(self):
        with pytest.raises(InputError, match="no methods requested"):
            check_methods([])

    def test_unknown(self):
        with pytest.raises(InputError):
            check_methods(["kr-magic"])

    def test_any_neighbor_count(self):
        assert check_methods(["nn-7", "mindist"]) == ["nn-7", "mindist"]

    def test_failures_are_returned(self, lattice_data):
        data, _ = lattice_data
        out = run_methods(data, ["nn-1", "nn-500"], EstimatorOptions())
        assert isinstance(out["nn-1"], RegressionEstimate)
        assert isinstance(out["nn-500"], InputError)


class TestDesigns:
    """Tests for the misalignment designs."""

    def test_checkerboard(self):
        stations, outcomes = checkerboard_split(4)
        assert stations.shape == outcomes.shape == (8, 2)
        assert [0.0, 0.0] in stations.tolist()
        assert not set(map(tuple, stations)) & set(map(tuple, outcomes))

    def test_half_split(self):
        a, b = half_split(11, derive_rng(0))
        assert len(a) == 5 and len(b) == 6
        assert sorted(np.concatenate([a, b]).tolist()) == list(range(11))


class TestSummaries:
    """Tests for the per-method table rows."""

    def test_row_statistics(self):
        row = summarize("fake", [fake_estimate(0.9), fake_estimate(1.1), fake_estimate(1.5)], truth=1.0, failures=1)
        betas = np.array([0.9, 1.1, 1.5])
        assert row.mean_beta == pytest.approx(betas.mean())
        assert row.rmse == pytest.approx(np.sqrt(np.mean((betas - 1.0) ** 2)))
        assert row.sd == pytest.approx(betas.std(ddof=1))
        assert row.mean_se == pytest.approx(0.1)
        assert row.coverage == pytest.approx(2 / 3)
        assert row.coverage_se == pytest.approx(np.sqrt((2 / 3) * (1 / 3) / 3))
        assert row.failures == 1
        assert row.inference == "naive"

    def test_no_successful_runs(self):
        with pytest.raises(NumericalError):
            summarize("fake", [], truth=1.0, failures=3)

    def test_too_many_failures(self):
        runs = [{"fake": fake_estimate(1.0)} for _ in range(8)] + [{"fake": NumericalError("design singular")}] * 2
        with pytest.raises(NumericalError, match="design singular"):
            _aggregate("test", 1.0, ["fake"], runs)

    def test_tolerated_failures(self):
        runs = [{"fake": fake_estimate(1.0)} for _ in range(19)] + [{"fake": NumericalError("design singular")}]
        report = _aggregate("test", 1.0, ["fake"], runs)
        assert report.rows[0].failures == 1
        assert report.rows[0].runs == 19


class TestLatticeExperiment:
    """Tests for the simulated lattice design."""

    def test_report(self, sim_cfg):
        report = lattice_experiment(sim_cfg, side=8, n_runs=3, methods=["nn-1", "kr-naive"], seed=1, workers=1)
        assert report.runs_attempted == 3
        assert [row.method for row in report.rows] == ["nn-1", "kr-naive"]
        assert report.truth == 1.5

    def test_threads_do_not_change_the_report(self, sim_cfg):
        serial = lattice_experiment(sim_cfg, side=6, n_runs=2, methods=["nn-1"], seed=2, workers=1)
        threaded = lattice_experiment(sim_cfg, side=6, n_runs=2, methods=["nn-1"], seed=2, workers=2)
        assert serial == threaded

    def test_side_too_small(self, sim_cfg):
        with pytest.raises(InputError):
            lattice_experiment(sim_cfg, side=3, n_runs=1, methods=["nn-1"])

    def test_single_slope_only(self, sim_cfg):
        cfg = sim_cfg.model_copy(update={"reg": RegressionParams(beta=[1.0, 2.0], gamma=[0.0])})
        with pytest.raises(InputError):
            lattice_experiment(cfg, side=6, n_runs=1, methods=["nn-1"])

    @pytest.mark.slow
    def test_all_methods(self, sim_cfg):
        options = EstimatorOptions(bootstrap_draws=30, abc_chain_length=100, n_synth=30, xi=5.0)
        report = lattice_experiment(sim_cfg, side=10, n_runs=2, seed=3, options=options, workers=2)
        assert len(report.rows) == 6


class TestCrossValidation:
    """Tests for the half-split design on aligned data."""

    def test_gls_reference(self, aligned):
        assert full_data_gls(aligned) == pytest.approx(2.0, abs=0.3)

    def test_report_with_given_truth(self, aligned):
        report = crossval_experiment(aligned, n_runs=3, truth=2.0, methods=["nn-1"], seed=0, workers=1)
        assert report.truth == 2.0
        assert report.rows[0].runs + report.rows[0].failures == 3

    def test_rank_deficient_split_counts_as_a_failure(self):
        """A split that leaves a control column empty on the outcome half fails that run only"""
        cfg = SimConfig(
            seed=2,
            theta=CovParams(sill=1.0, range_km=2.0),
            reg=RegressionParams(beta=[2.0], gamma=[1.0]),
            error_model={"sigma2": 0.05},
        )
        base = simulate_aligned(cfg, make_lattice(8))
        n = base.coords.shape[0]
        first_stations, _ = half_split(n, derive_rng(0, 0))
        dummy = np.zeros(n)
        dummy[first_stations[:2]] = 1.0
        aligned = AlignedDataset(coords=base.coords, r=base.r, y=base.y, F=np.column_stack([np.ones(n), dummy]))

        n_runs = 20
        expected = sum(dummy[half_split(n, derive_rng(0, run))[0]].sum() == 2.0 for run in range(n_runs))
        settings.MAX_FAILURE_SHARE = 1.0
        report = crossval_experiment(aligned, n_runs=n_runs, truth=2.0, methods=["nn-1"], seed=0, workers=1)
        assert expected >= 1
        assert report.rows[0].failures == expected
        assert report.rows[0].runs == n_runs - expected
