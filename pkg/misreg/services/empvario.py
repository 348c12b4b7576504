import logging
from typing import Sequence

import numpy as np
import pandas as pd

from misreg.config import settings
from misreg.exceptions import InputError
from misreg.models.data import FieldSample, MeanEstimate
from misreg.models.geometry import LagSpec, PairBin
from misreg.models.results import CrossFlavor, EmpiricalVariogram, VariogramEntry
from misreg.services.geometry import bin_pairs

logger = logging.getLogger(__name__)

SELF_FLAVOR = "self"
CROSS_FLAVOR_NAMES = {
    CrossFlavor.VARIOGRAM: "squared-difference",
    CrossFlavor.COVARIANCE: "centered-product",
}


def residuals(sample: FieldSample, mean_estimate: MeanEstimate | float) -> np.ndarray:
    """ε̂(s) = R(s) - m̂(s)"""
    return sample.values - MeanEstimate.coerce(mean_estimate).evaluate(sample.coords)


def _keep_bins(bins: list[PairBin], min_count: int | None) -> list[PairBin]:
    min_count = settings.MIN_PAIR_COUNT if min_count is None else min_count
    kept = []
    for b in bins:
        if b.count < max(min_count, 1):
            logger.warning("Dropping lag %s: %d pairs below minimum %d", b.lag.label, b.count, min_count)
            continue
        kept.append(b)
    if not kept:
        raise InputError("no estimable lags")
    return kept


def variogram_from_bins(
    resid: np.ndarray, bins: list[PairBin], min_count: int | None = None
) -> tuple[EmpiricalVariogram, list[PairBin]]:
    kept = _keep_bins(bins, min_count)
    entries = []
    for b in kept:
        diff = resid[b.pairs[:, 0]] - resid[b.pairs[:, 1]]
        entries.append(
            VariogramEntry(lag=b.lag, estimate=float(np.mean(diff**2)), count=b.count, mean_distance=b.mean_distance)
        )
    return EmpiricalVariogram(entries=entries, flavor=SELF_FLAVOR), kept


def cross_from_bins(
    r_resid: np.ndarray,
    y_centered: np.ndarray,
    bins: list[PairBin],
    flavor: CrossFlavor,
    min_count: int | None = None,
) -> tuple[EmpiricalVariogram, list[PairBin]]:
    """Bins hold (station i, outcome j) pairs"""
    kept = _keep_bins(bins, min_count)
    entries = []
    for b in kept:
        r_i = r_resid[b.pairs[:, 0]]
        y_j = y_centered[b.pairs[:, 1]]
        if flavor == CrossFlavor.VARIOGRAM:
            est = np.mean((y_j - r_i) ** 2)
        else:
            est = np.mean(r_i * y_j)
        entries.append(VariogramEntry(lag=b.lag, estimate=float(est), count=b.count, mean_distance=b.mean_distance))
    return EmpiricalVariogram(entries=entries, flavor=CROSS_FLAVOR_NAMES[flavor]), kept


def empirical_variogram(
    sample: FieldSample,
    mean_estimate: MeanEstimate | float,
    lags: Sequence[LagSpec],
    min_count: int | None = 1,
) -> EmpiricalVariogram:
    """Mean squared residual increment per lag bin; by default only empty bins are dropped"""
    if len(sample) < 2:
        raise InputError("empirical variogram needs at least two observations")
    bins = bin_pairs(sample.coords, None, lags)
    vario, _ = variogram_from_bins(residuals(sample, mean_estimate), bins, min_count)
    return vario


def center_outcomes(y: np.ndarray, y_level: float | np.ndarray | None = None) -> np.ndarray:
    if y_level is None:
        return y - y.mean()
    return y - np.asarray(y_level, dtype=float)


def empirical_cross_covariogram(
    r_sample: FieldSample,
    y_sample: FieldSample,
    mean_estimate: MeanEstimate | float,
    lags: Sequence[LagSpec],
    flavor: CrossFlavor | str | None = None,
    y_level: float | np.ndarray | None = None,
    min_count: int | None = None,
) -> EmpiricalVariogram:
    """Station-to-outcome cross statistic in variogram or covariance form.

    Y is centered by y_level (its sample mean by default), R by the mean estimate.
    """
    flavor = CrossFlavor(flavor or settings.CROSS_FLAVOR)
    bins = bin_pairs(r_sample.coords, y_sample.coords, lags)
    vario, _ = cross_from_bins(
        residuals(r_sample, mean_estimate),
        center_outcomes(y_sample.values, y_level),
        bins,
        flavor,
        min_count,
    )
    return vario


def to_frame(vario: EmpiricalVariogram) -> pd.DataFrame:
    """Plot-ready table; semivariance is only defined for variogram forms"""
    halved = vario.flavor != CROSS_FLAVOR_NAMES[CrossFlavor.COVARIANCE]
    return pd.DataFrame(
        {
            "lag_r": [e.lag.r for e in vario.entries],
            "lag_angle": [e.lag.angle if e.lag.angle is not None else np.nan for e in vario.entries],
            "mean_distance": vario.distances,
            "estimate": vario.estimates,
            "semivariance": vario.estimates / 2 if halved else np.nan,
            "count": vario.counts,
        }
    )
