import logging

import numpy as np

from misreg.exceptions import InputError
from misreg.models.covariance import CovParams, ErrorKind
from misreg.models.data import AlignedDataset, FieldSample, MisalignedDataset, SimConfig
from misreg.services.covmodel import cov_matrix
from misreg.services.geometry import LocationsLike, as_coords
from misreg.utils.helpers import derive_rng
from misreg.utils.linalg import cholesky_jittered, lower_factor

logger = logging.getLogger(__name__)


def _zero_mean_field(theta: CovParams, coords: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """L z with L Lᵀ = K(coords, coords); coincident points share a value when τ² = 0"""
    if theta.nugget == 0:
        uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    else:
        uniq, inverse = coords, np.arange(coords.shape[0])

    factor = cholesky_jittered(cov_matrix(theta, uniq), scale=theta.sill)
    z = rng.standard_normal(uniq.shape[0])
    return (lower_factor(factor) @ z)[inverse]


def simulate_field(
    cfg: SimConfig,
    locs: LocationsLike,
    rng: np.random.Generator | None = None,
) -> FieldSample:
    """One draw of R at locs; a fresh generator from cfg.seed unless rng is given"""
    coords = as_coords(locs)
    rng = derive_rng(cfg.seed) if rng is None else rng
    values = cfg.mean.evaluate(coords) + _zero_mean_field(cfg.theta, coords, rng)
    return FieldSample(coords=coords, values=values)


def _controls(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Intercept plus p - 1 standard normal columns"""
    return np.hstack([np.ones((n, 1)), rng.standard_normal((n, p - 1))])


def _errors(cfg: SimConfig, coords: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    model = cfg.error_model
    eps = np.sqrt(model.sigma2) * rng.standard_normal(coords.shape[0])
    if model.kind == ErrorKind.SPATIAL:
        eps = eps + _zero_mean_field(model.cov, coords, rng)
    return eps


def _outcomes(cfg: SimConfig, r_out: np.ndarray, coords: np.ndarray, rng: np.random.Generator):
    n = coords.shape[0]
    beta = np.asarray(cfg.reg.beta)
    gamma = np.asarray(cfg.reg.gamma)

    F = _controls(n, gamma.size, rng)
    group = None
    if beta.size > 1:
        idx = np.arange(n) % beta.size
        group = np.array([f"g{k + 1}" for k in idx])
        slope = beta[idx]
    else:
        slope = np.full(n, beta[0])

    y = r_out * slope + F @ gamma + _errors(cfg, coords, rng)
    return y, F, group


def simulate_misaligned(
    cfg: SimConfig,
    outcome_locs: LocationsLike,
    station_locs: LocationsLike,
    rng: np.random.Generator | None = None,
) -> tuple[MisalignedDataset, np.ndarray]:
    """Misaligned dataset plus the latent regressor at the outcome locations.

    The regressor is drawn once jointly over outcomes and stations, then Y is
    built at the outcomes and R is kept only at the stations.
    """
    out = as_coords(outcome_locs)
    sta = as_coords(station_locs)
    rng = derive_rng(cfg.seed) if rng is None else rng

    joint = simulate_field(cfg, np.vstack([out, sta]), rng=rng).values
    r_out, r_sta = joint[: out.shape[0]], joint[out.shape[0]:]

    y, F, group = _outcomes(cfg, r_out, out, rng)
    try:
        data = MisalignedDataset(outcome_locs=out, y=y, F=F, station_locs=sta, r_star=r_sta, group=group)
    except ValueError as e:
        raise InputError(f"Simulated dataset invalid: {e}") from e
    return data, r_out


def simulate_aligned(
    cfg: SimConfig,
    locs: LocationsLike,
    rng: np.random.Generator | None = None,
) -> AlignedDataset:
    coords = as_coords(locs)
    if len(cfg.reg.beta) != 1:
        raise InputError("aligned simulation takes a single regression coefficient")
    rng = derive_rng(cfg.seed) if rng is None else rng

    r = simulate_field(cfg, coords, rng=rng).values
    y, F, _ = _outcomes(cfg, r, coords, rng)
    return AlignedDataset(coords=coords, r=r, y=y, F=F)
