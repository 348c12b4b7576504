"""Isotropic covariance families and the variogram quantities built on them.

Variograms here are the full increment variance V(R(x) - R(x+h)), twice the
conventional semivariance.
"""

import numpy as np
from scipy import special

from misreg.exceptions import InputError
from misreg.models.covariance import CovKind, CovParams, Phi
from misreg.services.geometry import LocationsLike, pairwise_distances


def _check_distance(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise InputError("distance must be nonnegative")
    return d


def _matern(t: np.ndarray, nu: float) -> np.ndarray:
    out = np.ones_like(t)
    pos = t > 0
    tp = t[pos]
    with np.errstate(over="ignore", invalid="ignore"):
        vals = 2.0 ** (1.0 - nu) / special.gamma(nu) * tp**nu * special.kv(nu, tp)
    # kv underflows to 0 far out and the product can go nan
    out[pos] = np.where(np.isfinite(vals), vals, 0.0)
    return out


def correlation(params: CovParams, d) -> np.ndarray:
    """ρ(d) of the continuous part, ρ(0) = 1"""
    d = _check_distance(d)
    t = d / params.range_km
    if params.kind == CovKind.EXPONENTIAL:
        return np.exp(-t)
    if params.kind == CovKind.GAUSSIAN:
        return np.exp(-(t**2))
    return _matern(np.atleast_1d(t), params.nu).reshape(t.shape)


def cov(params: CovParams, d):
    """K(d) = θ1 ρ(d), plus the nugget τ² at d = 0"""
    d = _check_distance(d)
    k = params.sill * correlation(params, d)
    if params.nugget > 0:
        k = k + params.nugget * (d == 0)
    return k if k.ndim else float(k)


def semivariogram(params: CovParams, d):
    """Full-variance variogram 2(θ1 + τ² - θ1 ρ(d)); equals 2τ² at d = 0"""
    d = _check_distance(d)
    g = 2.0 * (params.sill + params.nugget - params.sill * correlation(params, d))
    return g if g.ndim else float(g)


def cross_covariogram(phi: Phi, d):
    """V(Y(x) - R(x+h)) under Y = βR: (1+β²)K(0) - 2βK(d)"""
    d = _check_distance(d)
    k0 = phi.theta.total_variance
    g = (1.0 + phi.beta**2) * k0 - 2.0 * phi.beta * np.asarray(cov(phi.theta, d))
    return g if g.ndim else float(g)


def cov_cross_moment(phi: Phi, d):
    """Cov(R(x), Y(x+h)) = βK(d)"""
    d = _check_distance(d)
    c = phi.beta * np.asarray(cov(phi.theta, d))
    return c if c.ndim else float(c)


def cov_matrix(params: CovParams, locs_a: LocationsLike, locs_b: LocationsLike | None = None) -> np.ndarray:
    """K(A, B); with B omitted the nugget sits on the diagonal only"""
    dist = pairwise_distances(locs_a, locs_b)
    mat = params.sill * correlation(params, dist)
    if params.nugget > 0:
        if locs_b is None:
            mat[np.diag_indices_from(mat)] += params.nugget
        else:
            mat = mat + params.nugget * (dist == 0)
    return mat
