"""Tests for misreg.services.covfit."""

import numpy as np
import pytest

from misreg.config import settings
from misreg.exceptions import InputError, NumericalError
from misreg.models.covariance import CovKind
from misreg.models.data import FieldSample, MeanBasis
from misreg.models.results import FitMethod
from misreg.services.covfit import (
    fit_covariance,
    fit_ml,
    fit_reml,
    injected_fit,
    profile_loglik,
    template_params,
)
from misreg.services.fieldsim import simulate_field
from misreg.services.geometry import make_lattice
from misreg.utils.linalg import is_psd


@pytest.fixture
def stations(sim_cfg) -> FieldSample:
    return simulate_field(sim_cfg, make_lattice(8))


@pytest.fixture
def ml(stations):
    return fit_ml(stations, kind="exponential")


class TestTemplate:
    """Tests for the fixed parts of the model."""

    def test_matern_takes_configured_smoothness(self):
        settings.MATERN_NU = 2.5
        assert template_params("matern").nu == 2.5

    def test_default_family(self):
        assert template_params().kind == CovKind(settings.COV_KIND)


class TestMaximumLikelihood:
    """Tests for fit_ml."""

    def test_result_shapes(self, ml):
        assert ml.method == FitMethod.ML
        assert ml.vcov_theta.shape == (2, 2)
        assert ml.vcov_joint.shape == (3, 3)
        assert ml.n_stations == 64
        np.testing.assert_allclose(ml.vcov_theta, ml.vcov_theta.T)
        assert is_psd(ml.vcov_theta)

    def test_is_a_maximum(self, ml, stations):
        for factor in (0.6, 1.6):
            perturbed = ml.theta_hat.with_vector(ml.theta_hat.to_vector() * [factor, 1.0])
            assert profile_loglik(perturbed, stations) <= ml.loglik + 1e-6
            perturbed = ml.theta_hat.with_vector(ml.theta_hat.to_vector() * [1.0, factor])
            assert profile_loglik(perturbed, stations) <= ml.loglik + 1e-6

    def test_linear_mean(self, stations):
        fit = fit_ml(stations, basis=MeanBasis.LINEAR)
        assert len(fit.mean_hat.coefficients) == 3
        assert fit.vcov_mean.shape == (3, 3)

    @pytest.mark.slow
    def test_recovers_parameters_on_a_large_lattice(self, sim_cfg):
        stations = simulate_field(sim_cfg, make_lattice(20))
        fit = fit_ml(stations)
        assert 0.3 < fit.theta_hat.sill < 3.0
        assert 0.5 < fit.theta_hat.range_km < 8.0


class TestRestrictedLikelihood:
    """Tests for fit_reml."""

    def test_no_joint_covariance(self, stations):
        fit = fit_reml(stations)
        assert fit.method == FitMethod.REML
        assert fit.vcov_joint is None

    def test_ols_mean(self, stations):
        fit = fit_reml(stations, mean_method="ols")
        assert fit.mean_hat.coefficients[0] == pytest.approx(float(np.mean(stations.values)))

    def test_unknown_mean_method(self, stations):
        with pytest.raises(InputError):
            fit_reml(stations, mean_method="median")

    def test_dispatch(self, stations):
        assert fit_covariance(stations, "reml").method == FitMethod.REML
        assert fit_covariance(stations, "ml", mean_method="gls").method == FitMethod.ML


class TestFitFailures:
    """Tests for inputs that cannot be fitted."""

    def test_too_few_stations(self):
        sample = FieldSample(coords=[[0, 0], [1, 0], [0, 1]], values=[1.0, 2.0, 3.0])
        with pytest.raises(InputError):
            fit_ml(sample)

    def test_coincident_stations(self):
        sample = FieldSample(coords=np.zeros((5, 2)), values=[1.0, 2.0, 3.0, 4.0, 5.0])
        with pytest.raises(InputError):
            fit_ml(sample)

    def test_collinear_linear_basis(self):
        coords = np.column_stack([np.arange(6.0), np.zeros(6)])
        sample = FieldSample(coords=coords, values=np.arange(6.0))
        with pytest.raises(NumericalError, match="collinear"):
            fit_ml(sample, basis=MeanBasis.LINEAR)


class TestInjectedFit:
    """Tests for fits at a known covariance."""

    def test_zero_parameter_uncertainty(self, stations, theta):
        fit = injected_fit(theta, stations)
        assert fit.theta_hat == theta
        np.testing.assert_array_equal(fit.vcov_theta, 0.0)
        assert fit.converged
