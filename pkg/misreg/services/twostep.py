"""Krig-and-regress with naive and two-step bootstrap inference, plus
nearest-neighbor imputation baselines."""

import concurrent.futures as cf
import logging

import numpy as np
import statsmodels.api as sm
from scipy import stats
from scipy.spatial import cKDTree

from misreg.config import settings
from misreg.exceptions import InputError, NumericalError
from misreg.models.data import MeanBasis, MeanEstimate, MisalignedDataset
from misreg.models.results import BootstrapDraws, FitResult, RegressionEstimate
from misreg.services.kriging import average_duplicates, blp, eblup
from misreg.utils.helpers import derive_rng, quantile_interval

logger = logging.getLogger(__name__)

MAX_REDRAWS = 1000


def regression_design(r_hat: np.ndarray, data: MisalignedDataset) -> tuple[np.ndarray, list[str], int]:
    """[R̂ (interacted with group indicators when present), F] and column names"""
    gamma_names = [f"gamma_{k + 1}" for k in range(data.F.shape[1])]
    if data.group is None:
        return np.column_stack([r_hat, data.F]), ["beta"] + gamma_names, 1

    labels = data.group_labels
    cols = [r_hat * (data.group == label) for label in labels]
    return np.column_stack(cols + [data.F]), [f"beta_{label}" for label in labels] + gamma_names, len(labels)


def _check_design(X: np.ndarray) -> None:
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise NumericalError("design singular")


def _ols_estimate(
    method: str,
    y: np.ndarray,
    X: np.ndarray,
    names: list[str],
    n_beta: int,
    level: float,
    diagnostics: dict,
) -> RegressionEstimate:
    _check_design(X)
    try:
        res = sm.OLS(y, X).fit()
    except Exception as e:
        raise NumericalError(f"OLS failed: {e}") from e

    ci = np.asarray(res.conf_int(alpha=1.0 - level))
    coef = np.asarray(res.params)
    return RegressionEstimate(
        method=method,
        names=names,
        beta_hat=coef[:n_beta].tolist(),
        gamma_hat=coef[n_beta:].tolist(),
        se=np.asarray(res.bse).tolist(),
        ci_low=ci[:, 0].tolist(),
        ci_high=ci[:, 1].tolist(),
        level=level,
        diagnostics={
            "inference": "naive",
            "n": int(y.shape[0]),
            "r2": float(res.rsquared),
            "sigma2": float(res.scale),
            **diagnostics,
        },
    )


def krig_and_regress(data: MisalignedDataset, fit: FitResult, level: float | None = None) -> RegressionEstimate:
    """OLS of Y on (EBLUP of R at the outcomes, F) with the usual, naive, standard errors"""
    level = settings.CI_LEVEL if level is None else level

    r_hat = eblup(fit, data.stations, data.outcome_locs).values
    X, names, n_beta = regression_design(r_hat, data)
    return _ols_estimate(
        "kr-naive",
        data.y,
        X,
        names,
        n_beta,
        level,
        {"sill": fit.theta_hat.sill, "range_km": fit.theta_hat.range_km},
    )


def nn_regress(data: MisalignedDataset, k: int, level: float | None = None) -> RegressionEstimate:
    """Impute R at each outcome as the mean of its k nearest stations, then OLS"""
    level = settings.CI_LEVEL if level is None else level
    if not 1 <= k <= data.n_stations:
        raise InputError(f"k must lie in [1, {data.n_stations}], got {k}")

    _, idx = cKDTree(data.station_locs).query(data.outcome_locs, k=k)
    idx = np.sort(np.asarray(idx).reshape(data.n_outcomes, k), axis=1)
    r_hat = data.r_star[idx].mean(axis=1)

    X, names, n_beta = regression_design(r_hat, data)
    return _ols_estimate(f"nn-{k}", data.y, X, names, n_beta, level, {"k": k})


class GaussianSampler:
    """N(mean, cov) sampler through a symmetric square root; cov may be singular"""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = np.asarray(mean, dtype=float)
        eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
        self.root = eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.root @ rng.standard_normal(self.mean.shape[0])


def two_step_bootstrap(
    data: MisalignedDataset,
    fit: FitResult,
    J: int | None = None,
    level: float | None = None,
    seed: int = 0,
    ci_method: str | None = None,
    mean_mode: str | None = None,
    workers: int | None = None,
) -> tuple[RegressionEstimate, BootstrapDraws]:
    """Bootstrap that redraws θ (and ρ in linear-mean mode) before re-Kriging.

    Each draw j: θ⁽ʲ⁾ ~ N(θ̂, V̂) redrawn until positive, R̂⁽ʲ⁾ by BLP at
    θ⁽ʲ⁾, outcome rows resampled with replacement, OLS refit. The point
    estimate is the mean of the draws and the SE their standard deviation.
    """
    J = settings.BOOTSTRAP_DRAWS if J is None else J
    level = settings.CI_LEVEL if level is None else level
    ci_method = ci_method or settings.CI_METHOD
    workers = settings.WORKERS if workers is None else workers
    if mean_mode is None:
        mean_mode = "linear" if fit.mean_hat.basis == MeanBasis.LINEAR else "constant"

    if J < 1:
        raise InputError(f"Number of bootstrap draws must be positive, got {J}")
    if J < 100:
        logger.warning("Only %d bootstrap draws; at least 100 are recommended", J)
    if ci_method not in ("percentile", "normal"):
        raise InputError(f"Unknown interval method: {ci_method}")
    if mean_mode not in ("constant", "linear"):
        raise InputError(f"Unknown mean mode: {mean_mode}")

    point = krig_and_regress(data, fit, level)
    stations, _ = average_duplicates(data.stations)
    theta_law = GaussianSampler(fit.theta_hat.to_vector(), fit.vcov_theta)
    rho_law = GaussianSampler(np.asarray(fit.mean_hat.coefficients), fit.vcov_mean)
    n = data.n_outcomes

    def one_draw(j: int):
        rng = derive_rng(seed, j)
        redraws = 0
        theta_vec = theta_law.draw(rng)
        while np.any(theta_vec <= 0):
            redraws += 1
            if redraws > MAX_REDRAWS:
                raise NumericalError("covariance draws keep leaving the positive domain")
            theta_vec = theta_law.draw(rng)

        theta_j = fit.theta_hat.with_vector(theta_vec)
        if mean_mode == "linear":
            mean_j = MeanEstimate(basis=fit.mean_hat.basis, coefficients=rho_law.draw(rng).tolist())
        else:
            mean_j = fit.mean_hat

        r_hat = blp(theta_j, mean_j, stations, data.outcome_locs).values
        X, _, _ = regression_design(r_hat, data)
        rows = rng.integers(0, n, size=n)
        singular = 0
        while np.linalg.matrix_rank(X[rows]) < X.shape[1]:
            singular += 1
            if singular > MAX_REDRAWS:
                raise NumericalError("design singular in every resample of the outcome rows")
            rows = rng.integers(0, n, size=n)
        coef, *_ = np.linalg.lstsq(X[rows], data.y[rows], rcond=None)
        return coef, theta_vec, np.asarray(mean_j.coefficients), redraws, singular

    try:
        if workers > 1:
            with cf.ThreadPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(one_draw, range(J)))
        else:
            results = [one_draw(j) for j in range(J)]
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"Bootstrap failed: {e}") from e

    coefs = np.array([r[0] for r in results])
    redraws = int(sum(r[3] for r in results))
    rank_redraws = int(sum(r[4] for r in results))
    if rank_redraws:
        logger.info("%d outcome resamples left the design singular and were drawn again", rank_redraws)
    share = redraws / (J + redraws)
    if share > settings.REDRAW_WARN_SHARE:
        logger.warning("%.0f%% of covariance draws were rejected and redrawn", 100 * share)

    n_beta = len(point.beta_hat)
    mean = coefs.mean(axis=0)
    sd = coefs.std(axis=0, ddof=1) if J > 1 else np.zeros(coefs.shape[1])
    if ci_method == "percentile":
        lo, hi = quantile_interval(coefs, level)
    else:
        z = stats.norm.ppf(0.5 + level / 2)
        lo, hi = mean - z * sd, mean + z * sd

    estimate = RegressionEstimate(
        method="kr-bootstrap",
        names=point.names,
        beta_hat=mean[:n_beta].tolist(),
        gamma_hat=mean[n_beta:].tolist(),
        se=sd.tolist(),
        ci_low=np.asarray(lo).tolist(),
        ci_high=np.asarray(hi).tolist(),
        level=level,
        diagnostics={
            "inference": f"bootstrap-{ci_method}",
            "draws": J,
            "redraws": redraws,
            "rank_redraws": rank_redraws,
            "mean_mode": mean_mode,
            "kr_point": point.beta_hat,
        },
    )
    draws = BootstrapDraws(
        betas=coefs[:, :n_beta],
        gammas=coefs[:, n_beta:],
        thetas=np.array([r[1] for r in results]),
        rhos=np.array([r[2] for r in results]),
    )
    logger.info("Two-step bootstrap: %d draws, beta=%s, se=%s", J, estimate.beta_hat, estimate.se[:n_beta])
    return estimate, draws
