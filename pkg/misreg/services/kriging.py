import logging

import numpy as np
import pandas as pd
from scipy import linalg

from misreg.exceptions import NumericalError
from misreg.models.covariance import CovParams
from misreg.models.data import FieldSample, MeanBasis, MeanEstimate
from misreg.models.results import FitResult, KrigingPrediction
from misreg.services.covfit import design_matrix, gls_coefficients
from misreg.services.covmodel import cov_matrix
from misreg.services.geometry import LocationsLike, as_coords
from misreg.utils.linalg import cho_solve, cholesky_jittered

logger = logging.getLogger(__name__)


def average_duplicates(stations: FieldSample) -> tuple[FieldSample, int]:
    """Collapse stations at identical coordinates to their mean value, first-seen order"""
    uniq, first, inverse = np.unique(stations.coords, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    merged = len(stations) - uniq.shape[0]
    if merged == 0:
        return stations, 0

    sums = np.bincount(inverse, weights=stations.values, minlength=uniq.shape[0])
    counts = np.bincount(inverse, minlength=uniq.shape[0])
    order = np.argsort(first)
    logger.info("Averaged %d duplicate station rows into %d locations", merged, uniq.shape[0])
    return FieldSample(coords=uniq[order], values=(sums / counts)[order]), merged


class _Krige:
    """One factorization of K* shared by a batch of targets"""

    def __init__(self, theta: CovParams, stations: FieldSample, targets: LocationsLike):
        self.theta = theta
        self.stations, _ = average_duplicates(stations)
        self.targets = as_coords(targets)
        self.factor = cholesky_jittered(cov_matrix(theta, self.stations.coords), scale=theta.sill)
        self.k_bar = cov_matrix(theta, self.stations.coords, self.targets)  # M x N
        self.weights = cho_solve(self.factor, self.k_bar)

    def predict(self, mean: MeanEstimate) -> np.ndarray:
        resid = self.stations.values - mean.evaluate(self.stations.coords)
        return mean.evaluate(self.targets) + self.weights.T @ resid

    def simple_variance(self) -> np.ndarray:
        return self.theta.total_variance - np.sum(self.k_bar * self.weights, axis=0)

    def universal_variance(self, basis: MeanBasis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Kriging variance with the GLS mean-estimation term; also returns ρ̂_GLS"""
        S = design_matrix(self.stations, basis)
        rho, info = gls_coefficients(self.factor, S, self.stations.values)
        gap = basis.design(self.targets).T - S.T @ self.weights  # p x N
        try:
            extra = np.sum(gap * linalg.solve(info, gap, assume_a="pos"), axis=0)
        except (linalg.LinAlgError, ValueError) as e:
            raise NumericalError(f"Kriging variance failed: {e}") from e
        return self.simple_variance() + extra, rho, info


def blp(
    theta: CovParams,
    mean: MeanEstimate | float,
    stations: FieldSample,
    targets: LocationsLike,
) -> KrigingPrediction:
    """Best linear predictor with a known mean"""
    krige = _Krige(theta, stations, targets)
    return KrigingPrediction(
        coords=krige.targets,
        values=krige.predict(MeanEstimate.coerce(mean)),
        kriging_variances=krige.simple_variance(),
    )


def blup(
    theta: CovParams,
    basis: MeanBasis,
    stations: FieldSample,
    targets: LocationsLike,
) -> KrigingPrediction:
    """BLP with the mean coefficients replaced by their GLS estimate"""
    krige = _Krige(theta, stations, targets)
    variances, rho, _ = krige.universal_variance(basis)
    mean = MeanEstimate(basis=basis, coefficients=[float(c) for c in rho])
    return KrigingPrediction(coords=krige.targets, values=krige.predict(mean), kriging_variances=variances)


def eblup(fit: FitResult, stations: FieldSample, targets: LocationsLike) -> KrigingPrediction:
    """Plug-in predictor at the fitted θ̂ and mean"""
    if not fit.converged:
        logger.warning("EBLUP at a covariance fit that did not converge")
    krige = _Krige(fit.theta_hat, stations, targets)
    variances, _, _ = krige.universal_variance(fit.mean_hat.basis)
    return KrigingPrediction(
        coords=krige.targets,
        values=krige.predict(fit.mean_hat),
        kriging_variances=variances,
    )


def leave_one_out(fit: FitResult, stations: FieldSample) -> pd.DataFrame:
    """Leave-one-out predictions at every station around the fitted mean.

    Uses the closed form R_i - pred_i = [K⁻¹(R - m)]_i / [K⁻¹]_ii.
    """
    stations, _ = average_duplicates(stations)
    theta = fit.theta_hat
    factor = cholesky_jittered(cov_matrix(theta, stations.coords), scale=theta.sill)

    centered = stations.values - fit.mean_hat.evaluate(stations.coords)
    precision_diag = np.diag(cho_solve(factor, np.eye(len(stations))))
    residual = cho_solve(factor, centered) / precision_diag

    return pd.DataFrame(
        {
            "x_km": stations.coords[:, 0],
            "y_km": stations.coords[:, 1],
            "observed": stations.values,
            "predicted": stations.values - residual,
            "residual": residual,
            "loo_variance": 1.0 / precision_diag,
        }
    )
