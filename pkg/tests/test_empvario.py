"""Tests for misreg.services.empvario."""

import logging
import math

import numpy as np
import pytest

from misreg.exceptions import InputError
from misreg.models.data import FieldSample, MeanEstimate
from misreg.models.geometry import LagSpec
from misreg.services.empvario import empirical_cross_covariogram, empirical_variogram, residuals, to_frame


@pytest.fixture
def square_sample(unit_square) -> FieldSample:
    return FieldSample(coords=unit_square, values=[0.0, 1.0, 2.0, 3.0])


LAGS = [LagSpec(r=1.0, r_tol=0.1), LagSpec(r=math.sqrt(2), r_tol=0.1)]


class TestEmpiricalVariogram:
    """Tests for the self variogram."""

    def test_residuals_remove_the_mean(self, square_sample):
        np.testing.assert_allclose(residuals(square_sample, 1.0), [-1.0, 0.0, 1.0, 2.0])

    def test_mean_squared_increments(self, square_sample):
        vario = empirical_variogram(square_sample, MeanEstimate.constant(0.0), LAGS, min_count=1)
        # sides: 1, 4, 4, 1; diagonals: 9, 1
        np.testing.assert_allclose(vario.estimates, [2.5, 5.0])
        np.testing.assert_array_equal(vario.counts, [4, 2])

    def test_single_pair_bin_kept_by_default(self, caplog):
        pair = FieldSample(coords=[[0.0, 0.0], [1.0, 0.0]], values=[1.0, 3.0])
        with caplog.at_level(logging.WARNING):
            vario = empirical_variogram(pair, 2.0, [LagSpec(r=1.0, r_tol=0.1), LagSpec(r=5.0, r_tol=0.1)])
        np.testing.assert_allclose(vario.estimates, [4.0])
        np.testing.assert_array_equal(vario.counts, [1])
        assert "Dropping lag" in caplog.text

    def test_constant_mean_does_not_matter(self, square_sample):
        a = empirical_variogram(square_sample, 0.0, LAGS, min_count=1)
        b = empirical_variogram(square_sample, 10.0, LAGS, min_count=1)
        np.testing.assert_allclose(a.estimates, b.estimates)

    def test_sparse_bins_dropped(self, square_sample, caplog):
        with caplog.at_level(logging.WARNING):
            vario = empirical_variogram(square_sample, 0.0, LAGS, min_count=3)
        assert len(vario.entries) == 1
        assert "Dropping lag" in caplog.text

    def test_no_estimable_lags(self, square_sample):
        with pytest.raises(InputError, match="no estimable lags"):
            empirical_variogram(square_sample, 0.0, [LagSpec(r=9.0, r_tol=0.1)], min_count=1)

    def test_needs_two_observations(self):
        with pytest.raises(InputError):
            empirical_variogram(FieldSample(coords=[[0.0, 0.0]], values=[1.0]), 0.0, LAGS)

    def test_frame_reports_semivariance(self, square_sample):
        frame = to_frame(empirical_variogram(square_sample, 0.0, LAGS, min_count=1))
        np.testing.assert_allclose(frame["semivariance"], [1.25, 2.5])


class TestCrossCovariogram:
    """Tests for the station-to-outcome cross statistic."""

    @pytest.fixture
    def samples(self):
        r = FieldSample(coords=[[0.0, 0.0]], values=[2.0])
        y = FieldSample(coords=[[1.0, 0.0], [2.0, 0.0]], values=[1.0, 3.0])
        return r, y

    def test_covariance_form_centers_outcomes(self, samples):
        r, y = samples
        vario = empirical_cross_covariogram(r, y, 0.0, [LagSpec(r=1.0, r_tol=0.1)], flavor="covariance", min_count=1)
        # y centered at its mean 2: 2 * (1 - 2)
        assert vario.estimates[0] == pytest.approx(-2.0)

    def test_variogram_form(self, samples):
        r, y = samples
        vario = empirical_cross_covariogram(
            r, y, 0.0, [LagSpec(r=2.0, r_tol=0.1)], flavor="variogram", y_level=0.0, min_count=1
        )
        assert vario.estimates[0] == pytest.approx(1.0)

    def test_covariance_form_has_no_semivariance(self, samples):
        r, y = samples
        vario = empirical_cross_covariogram(r, y, 0.0, [LagSpec(r=1.0, r_tol=0.1)], flavor="covariance", min_count=1)
        assert np.isnan(to_frame(vario)["semivariance"]).all()
