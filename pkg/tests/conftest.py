import os

os.environ.setdefault("MISREG_ENV", "ci")

import numpy as np
import pytest

from misreg.config import settings
from misreg.models.covariance import CovParams, ErrorModel, RegressionParams
from misreg.models.data import MeanEstimate, SimConfig
from misreg.services.covfit import injected_fit
from misreg.services.fieldsim import simulate_misaligned
from misreg.services.harness import checkerboard_split


@pytest.fixture(autouse=True)
def restore_settings():
    """Commands write onto the shared settings object; put it back after every test"""
    saved = settings.model_dump()
    settings.SHOW_PROGRESS = False
    yield
    for key, value in saved.items():
        setattr(settings, key, value)


@pytest.fixture
def theta() -> CovParams:
    return CovParams(sill=1.0, range_km=2.0)


@pytest.fixture
def sim_cfg(theta) -> SimConfig:
    return SimConfig(
        seed=7,
        mean=MeanEstimate.constant(0.5),
        theta=theta,
        reg=RegressionParams(beta=[1.5], gamma=[0.25]),
        error_model=ErrorModel(sigma2=0.1),
    )


@pytest.fixture
def lattice_data(sim_cfg):
    """10 x 10 checkerboard: 50 stations, 50 outcomes"""
    stations, outcomes = checkerboard_split(10)
    return simulate_misaligned(sim_cfg, outcomes, stations)


@pytest.fixture
def true_fit(lattice_data, theta):
    data, _ = lattice_data
    return injected_fit(theta, data.stations)


@pytest.fixture
def unit_square() -> np.ndarray:
    return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
