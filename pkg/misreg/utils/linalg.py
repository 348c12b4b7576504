"""Dense linear algebra and finite differences shared by the estimators.

Covariance matrices are factored, never inverted, except for the small
moment-space matrices of the minimum-distance weighting.
"""

import logging
from typing import Callable

import numpy as np
from scipy import linalg
from statsmodels.tools.numdiff import approx_fprime, approx_hess3

from misreg.config import settings
from misreg.exceptions import NumericalError

logger = logging.getLogger(__name__)


def cholesky_jittered(matrix: np.ndarray, scale: float, jitter: float | None = None):
    """cho_factor of a covariance matrix, retried once with diagonal jitter.

    The jitter is `jitter * scale` where scale is the sill of the model.
    """
    jitter = settings.JITTER_SCALE if jitter is None else jitter
    try:
        return linalg.cho_factor(matrix, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        pass

    bumped = matrix + jitter * max(scale, np.finfo(float).tiny) * np.eye(matrix.shape[0])
    try:
        factor = linalg.cho_factor(bumped, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise NumericalError("covariance not positive definite") from e

    logger.debug("Cholesky needed diagonal jitter %.3g", jitter * scale)
    return factor


def cho_solve(factor, rhs: np.ndarray) -> np.ndarray:
    return linalg.cho_solve(factor, rhs, check_finite=False)


def cho_logdet(factor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def lower_factor(factor) -> np.ndarray:
    """Explicit lower-triangular L from a cho_factor result"""
    return np.tril(factor[0])


def ridge_inverse(matrix: np.ndarray, ridge_factor: float | None = None) -> np.ndarray | None:
    """Inverse of S + λI with λ = ridge_factor * trace(S) / K.

    Returns None when the regularized matrix is not positive definite.
    """
    ridge_factor = settings.RIDGE_FACTOR if ridge_factor is None else ridge_factor
    sym = 0.5 * (matrix + matrix.T)
    k = sym.shape[0]
    lam = ridge_factor * np.trace(sym) / k
    reg = sym + lam * np.eye(k)

    eigvals = np.linalg.eigvalsh(reg)
    if not np.all(np.isfinite(eigvals)) or eigvals.min() <= 0:
        return None

    inv = linalg.inv(reg)
    return 0.5 * (inv + inv.T)


def relative_steps(x: np.ndarray, step: float) -> np.ndarray:
    return step * np.maximum(np.abs(x), 1.0)


def numeric_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> np.ndarray:
    """Central-difference Jacobian, shape (len(func(x)), len(x))"""
    x = np.asarray(x, dtype=float)
    m = np.atleast_1d(func(x)).size
    # approx_fprime halves epsilon in centered mode
    jac = approx_fprime(x, func, epsilon=2.0 * relative_steps(x, step), centered=True)
    return np.asarray(jac, dtype=float).reshape(m, x.size)


def numeric_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    return numeric_jacobian(lambda v: np.atleast_1d(func(v)), x, step).reshape(-1)


def numeric_hessian(func: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    hess = approx_hess3(x, func, epsilon=relative_steps(x, step))
    hess = np.asarray(hess, dtype=float).reshape(x.size, x.size)
    return 0.5 * (hess + hess.T)


def is_psd(matrix: np.ndarray, tol: float = 1e-10) -> bool:
    sym = 0.5 * (matrix + matrix.T)
    eigvals = np.linalg.eigvalsh(sym)
    scale = max(1.0, float(np.abs(eigvals).max(initial=0.0)))
    return bool(eigvals.min(initial=0.0) >= -tol * scale)
