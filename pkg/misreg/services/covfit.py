"""Mean and covariance estimation for a random field observed at stations.

ML profiles the mean out by GLS at every θ, which gives the joint maximizer.
REML maximizes the likelihood of error contrasts and recovers the mean by GLS
(or OLS) at θ̂. Both optimize over log θ with a multi-start simplex.
"""

import logging
import math

import numpy as np
from scipy import linalg
from scipy.optimize import minimize
from scipy.spatial.distance import pdist

from misreg.config import settings
from misreg.exceptions import InputError, NumericalError
from misreg.models.covariance import CovKind, CovParams
from misreg.models.data import FieldSample, MeanBasis, MeanEstimate
from misreg.models.results import FitMethod, FitResult
from misreg.services.covmodel import cov_matrix
from misreg.utils.linalg import cho_logdet, cho_solve, cholesky_jittered, numeric_gradient, numeric_hessian

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
START_RANGE_FACTORS = (0.25, 0.5, 1.0)


def template_params(kind: CovKind | str | None = None, nu: float | None = None, nugget: float | None = None) -> CovParams:
    """Placeholder θ carrying the fixed parts of the model (family, ν, τ²)"""
    kind = CovKind(kind or settings.COV_KIND)
    return CovParams(
        kind=kind,
        sill=1.0,
        range_km=1.0,
        nu=(settings.MATERN_NU if nu is None else nu) if kind == CovKind.MATERN else None,
        nugget=settings.NUGGET if nugget is None else nugget,
    )


def design_matrix(sample: FieldSample, basis: MeanBasis) -> np.ndarray:
    S = basis.design(sample.coords)
    if np.linalg.matrix_rank(S) < S.shape[1]:
        raise NumericalError("mean basis collinear")
    return S


def gls_coefficients(factor, S: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """ρ̂ = (SᵀK⁻¹S)⁻¹SᵀK⁻¹R and the matrix SᵀK⁻¹S"""
    kinv_s = cho_solve(factor, S)
    info = S.T @ kinv_s
    try:
        rho = linalg.solve(info, kinv_s.T @ values, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"GLS mean failed: {e}") from e
    return rho, info


def _gaussian_loglik(factor, resid: np.ndarray) -> float:
    n = resid.shape[0]
    quad = float(resid @ cho_solve(factor, resid))
    return -0.5 * (n * LOG_2PI + cho_logdet(factor) + quad)


def profile_loglik(
    theta: CovParams,
    sample: FieldSample,
    basis: MeanBasis = MeanBasis.CONSTANT,
    method: FitMethod = FitMethod.ML,
) -> float:
    """Log-likelihood at θ with the mean profiled out (ML) or the restricted likelihood (REML)"""
    S = basis.design(sample.coords)
    factor = cholesky_jittered(cov_matrix(theta, sample.coords), scale=theta.sill)
    rho, info = gls_coefficients(factor, S, sample.values)
    resid = sample.values - S @ rho

    if method == FitMethod.ML:
        return _gaussian_loglik(factor, resid)

    n, p = S.shape
    quad = float(resid @ cho_solve(factor, resid))
    _, logdet_info = np.linalg.slogdet(info)
    _, logdet_sts = np.linalg.slogdet(S.T @ S)
    return -0.5 * ((n - p) * LOG_2PI + cho_logdet(factor) + logdet_info - logdet_sts + quad)


def joint_loglik(theta: CovParams, rho: np.ndarray, sample: FieldSample, basis: MeanBasis) -> float:
    S = basis.design(sample.coords)
    factor = cholesky_jittered(cov_matrix(theta, sample.coords), scale=theta.sill)
    return _gaussian_loglik(factor, sample.values - S @ rho)


def _starts(sample: FieldSample) -> list[np.ndarray]:
    var0 = max(float(np.var(sample.values, ddof=1)), 1e-12)
    med = float(np.median(pdist(sample.coords)))
    if not med > 0:
        raise InputError("stations must not all coincide")
    factors = START_RANGE_FACTORS[: max(settings.N_STARTS, 1)]
    return [np.log([var0, f * med]) for f in factors]


def _objective(template: CovParams, sample: FieldSample, basis: MeanBasis, method: FitMethod):
    def neg_ll(log_theta: np.ndarray) -> float:
        if not np.all(np.abs(log_theta) < 700):
            return np.inf
        try:
            return -profile_loglik(template.with_vector(np.exp(log_theta)), sample, basis, method)
        except (NumericalError, ValueError):
            return np.inf

    return neg_ll


def _psd_inverse(hess: np.ndarray) -> tuple[np.ndarray, bool]:
    """Inverse of an information matrix; degenerate ones are projected to PSD"""
    sym = 0.5 * (hess + hess.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(eigvals).max(initial=0.0)))
    if np.all(np.isfinite(eigvals)) and eigvals.min() > 1e-10 * scale:
        inv = eigvecs @ np.diag(1.0 / eigvals) @ eigvecs.T
        return 0.5 * (inv + inv.T), False

    keep = np.isfinite(eigvals) & (eigvals > 1e-10 * scale)
    inv_vals = np.zeros_like(eigvals)
    inv_vals[keep] = 1.0 / eigvals[keep]
    inv = eigvecs @ np.diag(inv_vals) @ eigvecs.T
    return 0.5 * (inv + inv.T), True


def _fit(
    sample: FieldSample,
    method: FitMethod,
    kind: CovKind | str | None,
    basis: MeanBasis,
    nu: float | None,
    nugget: float | None,
    mean_method: str,
) -> FitResult:
    template = template_params(kind, nu, nugget)
    S = design_matrix(sample, basis)
    n, p = S.shape
    if n < p + 3:
        raise InputError(f"{method.value} fit needs at least {p + 3} stations, got {n}")

    neg_ll = _objective(template, sample, basis, method)
    best = None
    for x0 in _starts(sample):
        res = minimize(
            neg_ll,
            x0,
            method="Nelder-Mead",
            options={
                "maxiter": settings.OPTIMIZER_MAX_ITER,
                "xatol": settings.OPTIMIZER_TOL,
                "fatol": settings.OPTIMIZER_TOL,
            },
        )
        logger.debug("%s start %s -> %.6f (%s)", method.value, np.exp(x0), res.fun, res.message)
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res

    if best is None:
        raise NumericalError(f"{method.value} fit failed: no start gave a finite likelihood")

    log_theta = best.x
    theta_vec = np.exp(log_theta)
    theta_hat = template.with_vector(theta_vec)
    loglik = -float(best.fun)

    grad = numeric_gradient(lambda v: -neg_ll(v), log_theta, settings.JACOBIAN_STEP)
    grad_norm = float(np.linalg.norm(grad)) if np.all(np.isfinite(grad)) else np.inf
    converged = bool(best.success) and grad_norm < 1e-4 * max(1.0, abs(loglik))

    factor = cholesky_jittered(cov_matrix(theta_hat, sample.coords), scale=theta_hat.sill)
    rho_gls, info = gls_coefficients(factor, S, sample.values)
    D = np.diag(theta_vec)

    if method == FitMethod.ML:
        def joint_neg_ll(v: np.ndarray) -> float:
            try:
                return -joint_loglik(template.with_vector(np.exp(v[p:])), v[:p], sample, basis)
            except (NumericalError, ValueError):
                return np.inf

        x_hat = np.concatenate([rho_gls, log_theta])
        vcov, degenerate = _psd_inverse(numeric_hessian(joint_neg_ll, x_hat, settings.HESSIAN_STEP))
        T = linalg.block_diag(np.eye(p), D)
        vcov_joint = T @ vcov @ T
        rho_hat = rho_gls
        vcov_mean = vcov_joint[:p, :p]
        vcov_theta = vcov_joint[p:, p:]
    else:
        vcov_log, degenerate = _psd_inverse(numeric_hessian(neg_ll, log_theta, settings.HESSIAN_STEP))
        vcov_theta = D @ vcov_log @ D
        vcov_joint = None
        if mean_method == "ols":
            sts_inv = linalg.inv(S.T @ S)
            K = cov_matrix(theta_hat, sample.coords)
            rho_hat = sts_inv @ S.T @ sample.values
            vcov_mean = sts_inv @ S.T @ K @ S @ sts_inv
        else:
            rho_hat = rho_gls
            vcov_mean = linalg.inv(info)

    if degenerate:
        logger.warning("%s information matrix is singular; covariance flagged degenerate", method.value)
    if not converged:
        logger.warning(
            "%s fit did not converge (%s, gradient norm %.3g)", method.value, best.message, grad_norm
        )

    logger.info(
        "%s fit: sill=%.6g range=%.6g loglik=%.6f converged=%s",
        method.value,
        theta_hat.sill,
        theta_hat.range_km,
        loglik,
        converged,
    )
    return FitResult(
        theta_hat=theta_hat,
        mean_hat=MeanEstimate(basis=basis, coefficients=[float(c) for c in rho_hat]),
        vcov_theta=0.5 * (vcov_theta + vcov_theta.T),
        vcov_mean=0.5 * (vcov_mean + vcov_mean.T),
        vcov_joint=vcov_joint,
        loglik=loglik,
        method=method,
        converged=converged,
        iterations=int(best.nit),
        gradient_norm=grad_norm,
        vcov_degenerate=degenerate,
        n_stations=n,
    )


def fit_ml(
    stations: FieldSample,
    kind: CovKind | str | None = None,
    basis: MeanBasis = MeanBasis.CONSTANT,
    nu: float | None = None,
    nugget: float | None = None,
) -> FitResult:
    """Gaussian maximum likelihood over (mean, θ) from station data"""
    return _fit(stations, FitMethod.ML, kind, basis, nu, nugget, "gls")


def fit_reml(
    stations: FieldSample,
    kind: CovKind | str | None = None,
    basis: MeanBasis = MeanBasis.CONSTANT,
    nu: float | None = None,
    nugget: float | None = None,
    mean_method: str = "gls",
) -> FitResult:
    """Restricted maximum likelihood for θ, mean by GLS (or OLS) at θ̂"""
    if mean_method not in ("gls", "ols"):
        raise InputError(f"Unknown mean method: {mean_method}")
    return _fit(stations, FitMethod.REML, kind, basis, nu, nugget, mean_method)


def fit_covariance(stations: FieldSample, method: FitMethod | str = FitMethod.ML, **kwargs) -> FitResult:
    method = FitMethod(method)
    if method == FitMethod.ML:
        kwargs.pop("mean_method", None)
        return fit_ml(stations, **kwargs)
    return fit_reml(stations, **kwargs)


def injected_fit(
    theta: CovParams,
    stations: FieldSample,
    basis: MeanBasis = MeanBasis.CONSTANT,
) -> FitResult:
    """FitResult at known θ with the GLS mean; vcov of θ is zero"""
    S = design_matrix(stations, basis)
    factor = cholesky_jittered(cov_matrix(theta, stations.coords), scale=theta.sill)
    rho, info = gls_coefficients(factor, S, stations.values)
    return FitResult(
        theta_hat=theta,
        mean_hat=MeanEstimate(basis=basis, coefficients=[float(c) for c in rho]),
        vcov_theta=np.zeros((2, 2)),
        vcov_mean=linalg.inv(info),
        loglik=_gaussian_loglik(factor, stations.values - S @ rho),
        method=FitMethod.ML,
        converged=True,
        n_stations=S.shape[0],
    )
