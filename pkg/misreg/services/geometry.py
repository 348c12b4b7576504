import logging
import math
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from misreg.config import settings
from misreg.exceptions import InputError
from misreg.models.geometry import LagMode, LagSpec, Location, PairBin

logger = logging.getLogger(__name__)

LocationsLike = Sequence[Location] | np.ndarray


def as_coords(locs: LocationsLike) -> np.ndarray:
    """(n, 2) float array from Location objects or a coordinate array"""
    if isinstance(locs, np.ndarray):
        coords = np.asarray(locs, dtype=float)
    else:
        locs = list(locs)
        if locs and isinstance(locs[0], Location):
            coords = np.array([[loc.x, loc.y] for loc in locs], dtype=float)
        else:
            coords = np.asarray(locs, dtype=float)

    if coords.size == 0:
        raise InputError("no locations")
    coords = coords.reshape(-1, 2)
    if not np.all(np.isfinite(coords)):
        raise InputError("coordinates must be finite")
    return coords


def distance(a: Location, b: Location) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def pairwise_distances(locs_a: LocationsLike, locs_b: LocationsLike | None = None) -> np.ndarray:
    a = as_coords(locs_a)
    b = a if locs_b is None else as_coords(locs_b)
    return cdist(a, b)


def make_lattice(side: int, spacing: float = 1.0) -> np.ndarray:
    """side x side square grid anchored at the origin, row-major over x then y"""
    if side < 1:
        raise InputError(f"Lattice side must be at least 1, got {side}")
    if spacing <= 0:
        raise InputError(f"Lattice spacing must be positive, got {spacing}")

    ticks = np.arange(side, dtype=float) * spacing
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _angle_match(angles: np.ndarray, lag: LagSpec) -> np.ndarray:
    # angular distance on the half circle
    offset = np.mod(angles - lag.angle + math.pi / 2, math.pi) - math.pi / 2
    return np.abs(offset) <= lag.angle_tol


def bin_pairs(
    locs_a: LocationsLike,
    locs_b: LocationsLike | None,
    lags: Sequence[LagSpec],
) -> list[PairBin]:
    """Assign location pairs to lag bins.

    With locs_b None (or the same object as locs_a) the pairs are unordered,
    stored once with i < j. Otherwise every (i, j) cross pair is a candidate
    with i indexing locs_a and j indexing locs_b. Empty bins are kept.
    """
    aliased = locs_b is None or locs_b is locs_a
    a = as_coords(locs_a)
    b = a if aliased else as_coords(locs_b)

    if aliased:
        ii, jj = np.triu_indices(a.shape[0], k=1)
    else:
        ii, jj = np.meshgrid(np.arange(a.shape[0]), np.arange(b.shape[0]), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()

    delta = b[jj] - a[ii]
    dist = np.hypot(delta[:, 0], delta[:, 1])
    need_angles = any(lag.mode == LagMode.DIRECTIONAL for lag in lags)
    angles = np.mod(np.arctan2(delta[:, 1], delta[:, 0]), math.pi) if need_angles else None

    bins = []
    for lag in lags:
        mask = np.abs(dist - lag.r) <= lag.r_tol
        if lag.mode == LagMode.DIRECTIONAL:
            mask &= _angle_match(angles, lag)

        pairs = np.column_stack([ii[mask], jj[mask]])
        mean_distance = float(dist[mask].mean()) if mask.any() else float(lag.r)
        bins.append(PairBin(lag=lag, pairs=pairs, mean_distance=mean_distance))

    return bins


def default_lags(
    locs_a: LocationsLike,
    locs_b: LocationsLike | None = None,
    n_lags: int | None = None,
    lo_q: float | None = None,
    hi_q: float | None = None,
) -> list[LagSpec]:
    """Equally spaced isotropic lags between two percentiles of pairwise distances"""
    n_lags = settings.N_DEFAULT_LAGS if n_lags is None else n_lags
    lo_q = settings.LAG_LOW_QUANTILE if lo_q is None else lo_q
    hi_q = settings.LAG_HIGH_QUANTILE if hi_q is None else hi_q
    if n_lags < 1:
        raise InputError(f"Number of lags must be at least 1, got {n_lags}")

    a = as_coords(locs_a)
    if locs_b is None:
        if a.shape[0] < 2:
            raise InputError("default lags need at least two locations")
        d = cdist(a, a)[np.triu_indices(a.shape[0], k=1)]
    else:
        d = cdist(a, as_coords(locs_b)).ravel()

    lo, hi = np.percentile(d, [lo_q, hi_q])
    if n_lags == 1 or hi <= lo:
        r_tol = max((hi - lo) / 2, np.finfo(float).eps * max(hi, 1.0))
        return [LagSpec(r=float((lo + hi) / 2), r_tol=float(r_tol))]

    centers = np.linspace(lo, hi, n_lags)
    step = centers[1] - centers[0]
    return [LagSpec(r=float(r), r_tol=float(step / 2)) for r in centers]


def directional_lags(distances: Sequence[float], p_angles: int, r_tol: float) -> list[LagSpec]:
    """Distance x direction bins with centers kπ/p and half-width π/(2p).

    p_angles=1 gives plain isotropic bins.
    """
    if p_angles < 1:
        raise InputError(f"Number of directions must be at least 1, got {p_angles}")
    if p_angles == 1:
        return [LagSpec(r=float(r), r_tol=r_tol) for r in distances]

    half_width = math.pi / (2 * p_angles)
    return [
        LagSpec(
            mode=LagMode.DIRECTIONAL,
            r=float(r),
            r_tol=r_tol,
            angle=k * math.pi / p_angles,
            angle_tol=half_width,
        )
        for r in distances
        for k in range(p_angles)
    ]
