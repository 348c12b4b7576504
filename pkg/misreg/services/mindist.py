"""One-step minimum-distance estimation of φ = (β, θ).

The moment vector stacks cross entries (station R against outcome Y) and
self-variogram entries of R, each as empirical minus model value at the bin's
mean separation. Large-sample covariances of the moments come from the
Gaussian fourth-moment identity Cov(ab, cd) = Cov(a,c)Cov(b,d) + Cov(a,d)Cov(b,c),
summed exactly over the realized pairs (finite regime, and the pure and mixed
increasing-domain regimes when data is attached) or integrated over the plane
(the large-domain limits).
"""

import concurrent.futures as cf
import logging
import math
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy import linalg, signal, sparse, stats
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from misreg.config import settings
from misreg.exceptions import InputError, NumericalError
from misreg.models.covariance import CovParams, ErrorKind, ErrorModel, Phi
from misreg.models.data import MeanEstimate, MisalignedDataset
from misreg.models.geometry import LagMode, LagSpec, PairBin
from misreg.models.results import (
    CrossFlavor,
    FitResult,
    LocationDesign,
    MdResult,
    MomentKind,
    MomentVector,
    RegressionEstimate,
    Regime,
    SigmaG,
    WeightMatrix,
    WeightSource,
)
from misreg.services.covfit import template_params
from misreg.services.covmodel import cov, cov_cross_moment, cov_matrix, cross_covariogram, semivariogram
from misreg.services.empvario import cross_from_bins, residuals, variogram_from_bins
from misreg.services.geometry import bin_pairs, default_lags, directional_lags
from misreg.services.twostep import krig_and_regress
from misreg.utils.helpers import derive_rng
from misreg.utils.linalg import cholesky_jittered, lower_factor, numeric_jacobian, ridge_inverse

logger = logging.getLogger(__name__)

LOG_THETA_BOUND = 25.0
ORIENTATION_NODES = 8
FINITE_CHUNK = 512


class MomentSpec(NamedTuple):
    kind: MomentKind
    r: float
    angle: Optional[float]


# Moment vector


class MomentBuilder:
    """g_n(φ) with the empirical side computed once.

    Entries are ordered cross first, then self. Data-backed builders also keep
    the pair bins so the finite-sample covariance and synthetic moments can be
    computed on the same locations.
    """

    def __init__(
        self,
        empirical: np.ndarray,
        distances: np.ndarray,
        kinds: Sequence[MomentKind],
        template: CovParams,
        flavor: CrossFlavor = CrossFlavor.COVARIANCE,
        counts: Optional[np.ndarray] = None,
        lags: Optional[Sequence[LagSpec]] = None,
    ):
        self.empirical = np.asarray(empirical, dtype=float)
        self.distances = np.asarray(distances, dtype=float)
        self.kinds = [MomentKind(k) for k in kinds]
        self.template = template
        self.flavor = CrossFlavor(flavor)
        k = self.empirical.shape[0]
        self.counts = np.ones(k, dtype=int) if counts is None else np.asarray(counts, dtype=int)
        self.lags = list(lags) if lags is not None else [LagSpec(r=float(d), r_tol=1.0) for d in self.distances]

        if not (self.distances.shape[0] == len(self.kinds) == self.counts.shape[0] == len(self.lags) == k):
            raise InputError("moment entries and bookkeeping differ in length")

        self._cross = np.array([kd == MomentKind.CROSS for kd in self.kinds])
        n_cross = int(self._cross.sum())
        n_self = k - n_cross
        if n_cross < 1 or n_self < 2 or k < 3:
            raise NumericalError(f"under-identified: {n_cross} cross and {n_self} self moments")

        self.data: Optional[MisalignedDataset] = None
        self.mean_estimate: Optional[MeanEstimate] = None
        self.cross_bins: list[PairBin] = []
        self.self_bins: list[PairBin] = []

    @classmethod
    def from_arrays(
        cls,
        empirical: np.ndarray,
        distances: np.ndarray,
        kinds: Sequence[MomentKind | str],
        template: CovParams,
        flavor: CrossFlavor | str = CrossFlavor.COVARIANCE,
        counts: Optional[np.ndarray] = None,
    ) -> "MomentBuilder":
        """Builder over given empirical values, with no data behind it"""
        return cls(empirical, distances, kinds, template, CrossFlavor(flavor), counts)

    @classmethod
    def from_data(
        cls,
        data: MisalignedDataset,
        mean_estimate: MeanEstimate | float,
        lags_self: Sequence[LagSpec],
        lags_cross: Sequence[LagSpec],
        flavor: CrossFlavor | str | None = None,
        template: Optional[CovParams] = None,
        min_count: int | None = None,
    ) -> "MomentBuilder":
        if data.group is not None:
            raise InputError("minimum-distance estimation takes a single coefficient; drop the group column")
        flavor = CrossFlavor(flavor or settings.CROSS_FLAVOR)
        mean_estimate = MeanEstimate.coerce(mean_estimate)
        if template is None:
            template = template_params()

        r_res = residuals(data.stations, mean_estimate)
        y_res = _residualize(data.y, data.F)
        cross_bins = bin_pairs(data.station_locs, data.outcome_locs, lags_cross)
        self_bins = bin_pairs(data.station_locs, None, lags_self)

        try:
            cross, cross_kept = cross_from_bins(r_res, y_res, cross_bins, flavor, min_count)
        except InputError:
            cross, cross_kept = None, []
        try:
            selfv, self_kept = variogram_from_bins(r_res, self_bins, min_count)
        except InputError:
            selfv, self_kept = None, []

        entries = (cross.entries if cross else []) + (selfv.entries if selfv else [])
        builder = cls(
            empirical=np.array([e.estimate for e in entries]),
            distances=np.array([e.mean_distance for e in entries]),
            kinds=[MomentKind.CROSS] * len(cross_kept) + [MomentKind.SELF] * len(self_kept),
            template=template,
            flavor=flavor,
            counts=np.array([e.count for e in entries], dtype=int),
            lags=[e.lag for e in entries],
        )
        builder.data = data
        builder.mean_estimate = mean_estimate
        builder.cross_bins = cross_kept
        builder.self_bins = self_kept
        logger.debug("Moment builder: %d cross and %d self entries", len(cross_kept), len(self_kept))
        return builder

    @property
    def K(self) -> int:
        return int(self.empirical.shape[0])

    @property
    def specs(self) -> list[MomentSpec]:
        return [
            MomentSpec(kd, float(d), lag.angle if lag.mode == LagMode.DIRECTIONAL else None)
            for kd, d, lag in zip(self.kinds, self.distances, self.lags)
        ]

    def phi_from_vector(self, phi_vec: np.ndarray) -> Phi:
        return Phi(beta=float(phi_vec[0]), theta=self.template.with_vector(phi_vec[1:3]))

    def model_values(self, phi: Phi) -> np.ndarray:
        out = np.empty(self.K)
        d_cross = self.distances[self._cross]
        if self.flavor == CrossFlavor.COVARIANCE:
            out[self._cross] = cov_cross_moment(phi, d_cross)
        else:
            out[self._cross] = cross_covariogram(phi, d_cross)
        out[~self._cross] = semivariogram(phi.theta, self.distances[~self._cross])
        return out

    def g(self, phi_vec: np.ndarray) -> np.ndarray:
        """Empirical minus model moments at the natural-scale vector (β, θ1, θ2)"""
        return self.empirical - self.model_values(self.phi_from_vector(phi_vec))

    def evaluate(self, phi: Phi) -> MomentVector:
        return MomentVector(
            entries=self.g(phi.to_vector()),
            lags=self.lags,
            kinds=self.kinds,
            counts=self.counts,
            flavor=self.flavor,
        )

    def empirical_from(self, r_star: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Empirical moments of other values observed at this builder's locations"""
        if self.data is None:
            raise InputError("moment builder has no data locations")
        r_res = r_star - self.mean_estimate.evaluate(self.data.station_locs)
        y_res = _residualize(y, self.data.F)
        cross, _ = cross_from_bins(r_res, y_res, self.cross_bins, self.flavor, min_count=1)
        selfv, _ = variogram_from_bins(r_res, self.self_bins, min_count=1)
        return np.concatenate([cross.estimates, selfv.estimates])


def _residualize(y: np.ndarray, F: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(F, y, rcond=None)
    return y - F @ coef


def build_moments(
    data: MisalignedDataset,
    mean_estimate: MeanEstimate | float,
    lags_self: Sequence[LagSpec],
    lags_cross: Sequence[LagSpec],
    flavor: CrossFlavor | str | None = None,
    template: Optional[CovParams] = None,
    min_count: int | None = None,
) -> MomentBuilder:
    return MomentBuilder.from_data(data, mean_estimate, lags_self, lags_cross, flavor, template, min_count)


def isotropic_moments(
    data: MisalignedDataset,
    mean_estimate: MeanEstimate | float,
    distances_self: Sequence[float],
    distances_cross: Sequence[float],
    p_angles: int,
    r_tol: float,
    flavor: CrossFlavor | str | None = None,
    template: Optional[CovParams] = None,
    min_count: int | None = None,
) -> MomentBuilder:
    """Directional bins at every distance, all matched to the one isotropic model"""
    return MomentBuilder.from_data(
        data,
        mean_estimate,
        directional_lags(distances_self, p_angles, r_tol),
        directional_lags(distances_cross, p_angles, r_tol),
        flavor,
        template,
        min_count,
    )


# Estimation


def _perturbed_starts(x0: np.ndarray, n_starts: int) -> list[np.ndarray]:
    starts = [x0]
    for s in range(1, n_starts):
        sign = 1.0 if s % 2 else -1.0
        scale = 0.5 * ((s + 1) // 2)
        step = np.array([scale * max(abs(x0[0]), 0.1), scale, -scale]) * sign
        starts.append(x0 + step)
    return starts


def estimate(
    moments: MomentBuilder,
    B: WeightMatrix,
    start: Phi,
    n_starts: int | None = None,
) -> MdResult:
    """argmin g(φ)ᵀ B g(φ) over (β, log θ1, log θ2) by least squares on Lᵀg, B = LLᵀ"""
    n_starts = settings.N_STARTS if n_starts is None else n_starts
    if B.matrix.shape[0] != moments.K:
        raise InputError(f"weight matrix is {B.matrix.shape[0]}x{B.matrix.shape[0]} for {moments.K} moments")

    L = np.linalg.cholesky(B.matrix)

    def resid(x: np.ndarray) -> np.ndarray:
        return L.T @ moments.g(np.concatenate([x[:1], np.exp(x[1:])]))

    lo = np.array([-np.inf, -LOG_THETA_BOUND, -LOG_THETA_BOUND])
    hi = np.array([np.inf, LOG_THETA_BOUND, LOG_THETA_BOUND])
    x0 = np.concatenate([[start.beta], np.log(start.theta.to_vector())])

    runs = []
    for xs in _perturbed_starts(x0, max(n_starts, 1)):
        xs = np.clip(xs, lo + 1e-9, hi - 1e-9)
        try:
            res = least_squares(
                resid,
                xs,
                bounds=(lo, hi),
                method="trf",
                xtol=1e-12,
                ftol=1e-12,
                gtol=1e-12,
                max_nfev=settings.OPTIMIZER_MAX_ITER * 10,
            )
        except (ValueError, NumericalError) as e:
            logger.debug("minimum-distance start %s failed: %s", xs, e)
            continue
        runs.append(res)

    if not runs:
        raise NumericalError("minimum-distance optimization failed from every start")

    best = min(runs, key=lambda r: r.cost)
    objective = float(2.0 * best.cost)
    phi_vec = np.concatenate([best.x[:1], np.exp(best.x[1:])])

    agree = True
    for res in runs:
        if res is best or 2.0 * res.cost > objective + 1e-8 * max(1.0, objective):
            continue
        other = np.concatenate([res.x[:1], np.exp(res.x[1:])])
        if np.any(np.abs(other - phi_vec) > 1e-4 * np.maximum(np.abs(phi_vec), 1.0)):
            agree = False
    if not agree:
        logger.warning("possible non-identification: starts reach the same objective at different parameters")

    converged = bool(best.status > 0)
    if not converged:
        logger.warning("minimum-distance optimizer stopped: %s", best.message)

    return MdResult(
        phi_hat=moments.phi_from_vector(phi_vec),
        objective_at_min=max(objective, 0.0),
        converged=converged,
        regime=Regime(settings.REGIME),
        weight_source=B.source,
        n_moments=moments.K,
        starts_agree=agree,
        diagnostics={"nfev": int(best.nfev), "starts": len(runs)},
    )


def jacobian(moments: MomentBuilder, phi: Phi, step: float | None = None) -> np.ndarray:
    """Γ = ∂g/∂φ at natural-scale φ, central differences"""
    step = settings.JACOBIAN_STEP if step is None else step
    return numeric_jacobian(moments.g, phi.to_vector(), step)


def vcov_md(gamma: np.ndarray, B: np.ndarray, sigma: np.ndarray, rate: float = 1.0) -> np.ndarray:
    """A ΓᵀBΣBΓ A / rate² with A = (ΓᵀBΓ)⁻¹"""
    if np.linalg.matrix_rank(gamma) < gamma.shape[1]:
        raise NumericalError("moments uninformative for some parameter")
    bread = gamma.T @ B @ gamma
    try:
        A = linalg.inv(bread)
    except linalg.LinAlgError as e:
        raise NumericalError(f"moments uninformative for some parameter: {e}") from e
    meat = gamma.T @ B @ sigma @ B @ gamma
    V = A @ meat @ A / rate**2
    return 0.5 * (V + V.T)


# Moment covariance


def location_design(coords: np.ndarray, grid: int | None = None, uniform: bool | None = None) -> LocationDesign:
    """Histogram estimate of Q = ∫f² on the padded bounding box, normalized to unit area"""
    grid = settings.DENSITY_GRID if grid is None else grid
    uniform = settings.UNIFORM_DENSITY if uniform is None else uniform
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    span = coords.max(axis=0) - coords.min(axis=0)
    if not span[0] * span[1] > 0:
        raise InputError("locations span no area; the density cannot be estimated")
    distinct = np.unique(coords, axis=0)
    nearest, _ = cKDTree(distinct).query(distinct, k=2)
    spacing = float(np.median(nearest[:, 1]))
    width, height = float(span[0] + spacing), float(span[1] + spacing)
    base = dict(n=int(distinct.shape[0]), area=width * height, width=width, height=height)
    if uniform:
        return LocationDesign(Q=1.0, **base)

    lo = coords.min(axis=0) - 0.5 * spacing
    counts, _, _ = np.histogram2d(
        coords[:, 0], coords[:, 1], bins=grid, range=[[lo[0], lo[0] + width], [lo[1], lo[1] + height]]
    )
    p = counts / counts.sum()
    return LocationDesign(Q=float(np.sum(p**2) * grid**2), density=p, **base)


def design_overlap(design: LocationDesign, X: np.ndarray) -> np.ndarray:
    """∫f(s)f(s+x)ds / ∫f² at the rows of X: 1 at the origin, 0 once x leaves the region"""
    X = np.atleast_2d(X)
    if design.width is None or design.height is None:
        return np.ones(X.shape[0])
    u = X[:, 0] / design.width
    v = X[:, 1] / design.height
    if design.density is None:
        return np.clip(1.0 - np.abs(u), 0.0, None) * np.clip(1.0 - np.abs(v), 0.0, None)

    p = design.density
    auto = signal.correlate(p, p, mode="full") / np.sum(p**2)
    gx = np.arange(-(p.shape[0] - 1), p.shape[0]) / p.shape[0]
    gy = np.arange(-(p.shape[1] - 1), p.shape[1]) / p.shape[1]
    interp = RegularGridInterpolator((gx, gy), auto, bounds_error=False, fill_value=0.0)
    return np.clip(interp(np.column_stack([u, v])), 0.0, None)


def _field_covariances(phi: Phi, error_model: ErrorModel) -> dict[tuple[str, str], Callable]:
    theta, beta = phi.theta, phi.beta

    def c_rr(d):
        return np.asarray(cov(theta, d))

    def c_ry(d):
        return beta * c_rr(d)

    def c_yy(d):
        out = beta**2 * c_rr(d) + error_model.sigma2 * (np.asarray(d) == 0)
        if error_model.kind == ErrorKind.SPATIAL:
            out = out + np.asarray(cov(error_model.cov, d))
        return out

    return {("R", "R"): c_rr, ("R", "Y"): c_ry, ("Y", "R"): c_ry, ("Y", "Y"): c_yy}


def moment_forms(kind: MomentKind, flavor: CrossFlavor) -> tuple[list, list]:
    """Statistic u·v as two linear forms of (field, at_lag, coefficient) terms.

    Self: u = v = R(s) - R(s+h). Cross variogram form: u = v = Y(s+h) - R(s).
    Cross covariance form: u = R(s), v = Y(s+h).
    """
    if kind == MomentKind.SELF:
        u = [("R", False, 1.0), ("R", True, -1.0)]
        return u, u
    if flavor == CrossFlavor.VARIOGRAM:
        u = [("Y", True, 1.0), ("R", False, -1.0)]
        return u, u
    return [("R", False, 1.0)], [("Y", True, 1.0)]


def _form_cov(form_a, h_a, form_b, h_b, X, cfun) -> np.ndarray:
    """Cov(form_a at the origin, form_b shifted by each row of X)"""
    total = np.zeros(X.shape[0])
    for fa, lag_a, ca in form_a:
        pa = h_a if lag_a else np.zeros(2)
        for fb, lag_b, cb in form_b:
            pb = h_b if lag_b else np.zeros(2)
            d = np.linalg.norm(X + (pb - pa), axis=1)
            total += ca * cb * cfun[(fa, fb)](d)
    return total


def sigma_integrand(
    phi: Phi,
    spec_k: MomentSpec,
    spec_l: MomentSpec,
    h_k: np.ndarray,
    h_l: np.ndarray,
    X: np.ndarray,
    flavor: CrossFlavor = CrossFlavor.COVARIANCE,
    error_model: Optional[ErrorModel] = None,
) -> np.ndarray:
    """σ_kl(x) = Cov(q_k at 0, q_l at x) for lag vectors h_k, h_l, over the rows of X"""
    cfun = _field_covariances(phi, error_model or ErrorModel())
    u_k, v_k = moment_forms(spec_k.kind, flavor)
    u_l, v_l = moment_forms(spec_l.kind, flavor)
    X = np.atleast_2d(X)
    return _form_cov(u_k, h_k, u_l, h_l, X, cfun) * _form_cov(v_k, h_k, v_l, h_l, X, cfun) + _form_cov(
        u_k, h_k, v_l, h_l, X, cfun
    ) * _form_cov(v_k, h_k, u_l, h_l, X, cfun)


def _unit(angle: float) -> np.ndarray:
    return np.array([math.cos(angle), math.sin(angle)])


def _orientations(spec_k: MomentSpec, spec_l: MomentSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Lag-vector pairs to average over; integrals are rotation invariant"""
    if spec_k.angle is not None and spec_l.angle is not None:
        return [
            (spec_k.r * _unit(a), spec_l.r * _unit(b))
            for a in (spec_k.angle, spec_k.angle + math.pi)
            for b in (spec_l.angle, spec_l.angle + math.pi)
        ]
    base = spec_k.angle if spec_k.angle is not None else 0.0
    return [
        (spec_k.r * _unit(base), spec_l.r * _unit(base + 2 * math.pi * t / ORIENTATION_NODES))
        for t in range(ORIENTATION_NODES)
    ]


def _polar_nodes(radius: float, n_radial: int, n_angular: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * radius * (t + 1.0)
    wr = 0.5 * radius * w * r
    ang = 2 * math.pi * np.arange(n_angular) / n_angular
    X = (r[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)[None, :, :]).reshape(-1, 2)
    weights = np.repeat(wr, n_angular) * (2 * math.pi / n_angular)
    return X, weights


def _sigma_entry(phi, spec_k, spec_l, flavor, error_model, X, weights, ring):
    """(σ̄(0), ∫σ̄ weighted by the region overlap, tail estimate) for one (k, l)"""
    at_zero = sigma_integrand(
        phi, spec_k, spec_l, *_orientations(spec_k, spec_l)[0], np.zeros((1, 2)), flavor, error_model
    )[0]
    integral = 0.0
    edge = 0.0
    for h_k, h_l in _orientations(spec_k, spec_l):
        vals = sigma_integrand(phi, spec_k, spec_l, h_k, h_l, X, flavor, error_model)
        integral += float(weights @ vals)
        edge = max(edge, float(np.abs(vals[ring]).max()))
    n_orient = len(_orientations(spec_k, spec_l))
    return float(at_zero), integral / n_orient, edge


def _bin_lags(moments: MomentBuilder) -> list[tuple[np.ndarray, np.ndarray]]:
    """(anchor station, lag vector) of every pair, bins in moment order"""
    data = moments.data
    out = []
    for b in moments.cross_bins:
        i, j = b.pairs[:, 0], b.pairs[:, 1]
        out.append((i, data.outcome_locs[j] - data.station_locs[i]))
    for b in moments.self_bins:
        i, j = b.pairs[:, 0], b.pairs[:, 1]
        out.append((i, data.station_locs[j] - data.station_locs[i]))
    return out


def shared_anchor_term(phi: Phi, moments: MomentBuilder, error_model: Optional[ErrorModel] = None) -> np.ndarray:
    """Σ σ_kl(0) over pairs of bin pairs anchored at the same station, divided by N_k·N_l.

    Each couple is evaluated at its realized lag vectors. With one pair per
    station in every bin this is σ(0) / n.
    """
    if moments.data is None:
        raise InputError("the shared-anchor term needs a data-backed moment builder")
    error_model = error_model or ErrorModel()
    lags = _bin_lags(moments)
    M = moments.data.n_stations
    incidence = [
        sparse.csr_matrix((np.ones(a.shape[0]), (np.arange(a.shape[0]), a)), shape=(a.shape[0], M)) for a, _ in lags
    ]
    specs = moments.specs
    K = moments.K
    out = np.zeros((K, K))
    for k in range(K):
        for l in range(k, K):
            p, q = (incidence[k] @ incidence[l].T).nonzero()
            origin = np.zeros((p.shape[0], 2))
            vals = sigma_integrand(
                phi, specs[k], specs[l], lags[k][1][p], lags[l][1][q], origin, moments.flavor, error_model
            )
            out[k, l] = out[l, k] = float(vals.sum()) / (lags[k][0].shape[0] * lags[l][0].shape[0])
    return out


def _quadrature_sigma(phi, moments, regime, error_model, design, workers) -> SigmaG:
    workers = settings.WORKERS if workers is None else workers
    specs = moments.specs
    radius = settings.QUAD_RADIUS_FACTOR * phi.theta.range_km + 2.0 * float(moments.distances.max())
    X, weights = _polar_nodes(radius, settings.QUAD_RADIAL_NODES, settings.QUAD_ANGULAR_NODES)
    weights = weights * design_overlap(design, X)
    ring = slice(X.shape[0] - settings.QUAD_ANGULAR_NODES, X.shape[0])

    K = moments.K
    index = [(k, l) for k in range(K) for l in range(k, K)]

    def one(kl):
        k, l = kl
        return _sigma_entry(phi, specs[k], specs[l], moments.flavor, error_model, X, weights, ring)

    if workers > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as ex:
            entries = list(ex.map(one, index))
    else:
        entries = [one(kl) for kl in index]

    at_zero = np.zeros((K, K))
    integral = np.zeros((K, K))
    tail = 0.0
    for (k, l), (s0, s_int, edge) in zip(index, entries):
        at_zero[k, l] = at_zero[l, k] = s0
        integral[k, l] = integral[l, k] = s_int
        tail = max(tail, edge * 2 * math.pi * radius * phi.theta.range_km)

    scale = max(float(np.abs(integral).max()), np.finfo(float).tiny)
    if tail > settings.QUAD_TAIL_TOL * scale:
        raise NumericalError(
            f"moment covariance quadrature did not converge: tail estimate {tail:.3g} "
            f"exceeds {settings.QUAD_TAIL_TOL:g} x {scale:.3g}"
        )

    if regime == Regime.PURE:
        within = at_zero if moments.data is None else design.n * shared_anchor_term(phi, moments, error_model)
        matrix = within + design.Q * design.C1 * integral
        rate = math.sqrt(design.n)
    else:
        matrix = design.Q * integral
        rate = design.lambda_n
    return SigmaG(matrix=0.5 * (matrix + matrix.T), regime=regime, rate=rate, tail_bound=tail)


def sigma_g(
    phi: Phi,
    moments: MomentBuilder,
    regime: Regime | str | None = None,
    error_model: Optional[ErrorModel] = None,
    design: Optional[LocationDesign] = None,
    workers: int | None = None,
    quadrature: bool | None = None,
) -> SigmaG:
    """Covariance of the moment vector at φ; Var(g_n) ≈ matrix / rate².

    finite: exact Var(g_n) over the realized pairs, rate 1
    pure:   rate √n
    mixed:  rate λ_n
    A data-backed builder puts the realized-pair covariance on the regime's
    scale. With quadrature, or without data, the large-domain limits are used:
    pure = n·W + Q·C1·∫σ̄ω and mixed = Q·∫σ̄ω, with W the shared-anchor term
    (σ̄(0)/n without data), σ̄ averaged over the lag orientations a bin can hold
    and ω the overlap of the region with its translate.
    """
    regime = Regime(regime or settings.REGIME)
    error_model = error_model or ErrorModel()
    quadrature = settings.SIGMA_QUADRATURE if quadrature is None else quadrature
    if regime == Regime.FINITE:
        return SigmaG(matrix=finite_sigma(phi, moments, error_model), regime=regime, rate=1.0)

    if design is None:
        if moments.data is None:
            raise InputError("a location design is needed for builders without data")
        design = location_design(np.vstack([moments.data.station_locs, moments.data.outcome_locs]))

    if quadrature or moments.data is None:
        return _quadrature_sigma(phi, moments, regime, error_model, design, workers)

    scale = float(design.n) if regime == Regime.PURE else design.area
    exact = finite_sigma(phi, moments, error_model)
    return SigmaG(matrix=scale * exact, regime=regime, rate=math.sqrt(scale))


def joint_covariance(phi: Phi, data: MisalignedDataset, error_model: ErrorModel) -> np.ndarray:
    """Covariance of [R at stations, Y at outcomes] under Y = βR + e"""
    theta, beta = phi.theta, phi.beta
    k_ss = cov_matrix(theta, data.station_locs)
    k_so = cov_matrix(theta, data.station_locs, data.outcome_locs)
    k_oo = cov_matrix(theta, data.outcome_locs)
    err = error_model.sigma2 * np.eye(data.n_outcomes)
    if error_model.kind == ErrorKind.SPATIAL:
        err = err + cov_matrix(error_model.cov, data.outcome_locs)
    return np.block([[k_ss, beta * k_so], [beta * k_so.T, beta**2 * k_oo + err]])


def _bin_forms(kind: MomentKind, flavor: CrossFlavor, pairs: np.ndarray, offset: int):
    """Index/coefficient arrays (i1, c1, i2, c2) of the u and v forms of every pair"""
    i, j = pairs[:, 0], pairs[:, 1]
    ones = np.ones(i.shape[0])
    if kind == MomentKind.SELF:
        u = (i, ones, j, -ones)
        return u, u
    if flavor == CrossFlavor.VARIOGRAM:
        u = (offset + j, ones, i, -ones)
        return u, u
    return (i, ones, i, 0 * ones), (offset + j, ones, offset + j, 0 * ones)


def _forms_cov(Z: np.ndarray, a, b) -> np.ndarray:
    a1, ca1, a2, ca2 = a
    b1, cb1, b2, cb2 = b
    return (
        ca1[:, None] * cb1[None, :] * Z[np.ix_(a1, b1)]
        + ca1[:, None] * cb2[None, :] * Z[np.ix_(a1, b2)]
        + ca2[:, None] * cb1[None, :] * Z[np.ix_(a2, b1)]
        + ca2[:, None] * cb2[None, :] * Z[np.ix_(a2, b2)]
    )


def _slice_forms(forms, rows: slice):
    return tuple(arr[rows] for arr in forms)


def residualized_covariance(Z: np.ndarray, F: np.ndarray, offset: int) -> np.ndarray:
    """Z with the outcome block replaced by its residuals on F: T Z Tᵀ, T = diag(I, M_F)"""
    M_F = np.eye(F.shape[0]) - F @ np.linalg.pinv(F)
    T = linalg.block_diag(np.eye(offset), M_F)
    return T @ Z @ T.T


def finite_sigma(phi: Phi, moments: MomentBuilder, error_model: ErrorModel) -> np.ndarray:
    """Exact Gaussian Var(g_n) given the realized pairs.

    Y enters through its residuals on F, as in the empirical moments; the
    station mean is treated as known.
    """
    if moments.data is None:
        raise InputError("the finite regime needs a data-backed moment builder")
    offset = moments.data.n_stations
    Z = residualized_covariance(joint_covariance(phi, moments.data, error_model), moments.data.F, offset)

    bins = [(MomentKind.CROSS, b) for b in moments.cross_bins] + [(MomentKind.SELF, b) for b in moments.self_bins]
    forms = [_bin_forms(kind, moments.flavor, b.pairs, offset) for kind, b in bins]
    counts = np.array([b.count for _, b in bins], dtype=float)

    K = len(bins)
    out = np.zeros((K, K))
    for k in range(K):
        u_k, v_k = forms[k]
        for l in range(k, K):
            u_l, v_l = forms[l]
            total = 0.0
            for start in range(0, int(counts[k]), FINITE_CHUNK):
                rows = slice(start, start + FINITE_CHUNK)
                uk, vk = _slice_forms(u_k, rows), _slice_forms(v_k, rows)
                c_uu = _forms_cov(Z, uk, u_l)
                if u_k is v_k and u_l is v_l:
                    total += float(np.sum(2.0 * c_uu**2))
                else:
                    total += float(
                        np.sum(c_uu * _forms_cov(Z, vk, v_l) + _forms_cov(Z, uk, v_l) * _forms_cov(Z, vk, u_l))
                    )
            out[k, l] = out[l, k] = total / (counts[k] * counts[l])
    return out


# Weighting


def _diagonal_fallback(sigma: np.ndarray) -> WeightMatrix:
    diag = np.diag(sigma).copy()
    good = np.isfinite(diag) & (diag > 0)
    weights = np.ones_like(diag)
    weights[good] = 1.0 / diag[good]
    return WeightMatrix(matrix=np.diag(weights), source=WeightSource.DIAGONAL)


def _invert_weight(sigma: np.ndarray, source: WeightSource) -> WeightMatrix:
    inv = ridge_inverse(sigma)
    if inv is None:
        logger.warning("moment covariance is indefinite after regularization; falling back to diagonal weights")
        return _diagonal_fallback(sigma)
    try:
        return WeightMatrix(matrix=inv, source=source)
    except ValueError:
        logger.warning("inverted moment covariance is not positive definite; falling back to diagonal weights")
        return _diagonal_fallback(sigma)


def synthetic_moments(
    phi: Phi,
    moments: MomentBuilder,
    error_model: ErrorModel,
    n_synth: int,
    seed: int = 0,
) -> np.ndarray:
    """Empirical moment vectors of n_synth datasets simulated at the observed locations"""
    if moments.data is None:
        raise InputError("synthetic moments need a data-backed moment builder")
    data = moments.data
    sta, out = data.station_locs, data.outcome_locs
    union = np.vstack([sta, out])

    factor = cholesky_jittered(cov_matrix(phi.theta, union), scale=phi.theta.sill)
    L = lower_factor(factor)
    mean = moments.mean_estimate.evaluate(union)
    err_root = None
    if error_model.kind == ErrorKind.SPATIAL:
        err_factor = cholesky_jittered(cov_matrix(error_model.cov, out), scale=error_model.cov.sill)
        err_root = lower_factor(err_factor)

    rng = derive_rng(seed)
    M = data.n_stations
    draws = np.empty((n_synth, moments.K))
    for s in range(n_synth):
        field = mean + L @ rng.standard_normal(union.shape[0])
        e = math.sqrt(error_model.sigma2) * rng.standard_normal(data.n_outcomes)
        if err_root is not None:
            e = e + err_root @ rng.standard_normal(data.n_outcomes)
        y = phi.beta * field[M:] + e
        draws[s] = moments.empirical_from(field[:M], y)
    return draws


def efficient_weight(
    phi_at: Phi,
    moments: MomentBuilder,
    mode: str = "plugin",
    n_synth: int | None = None,
    error_model: Optional[ErrorModel] = None,
    regime: Regime | str | None = None,
    seed: int = 0,
) -> WeightMatrix:
    """Inverse moment covariance at phi_at, from the large-sample formula (plugin)
    or from simulated datasets (synthetic)"""
    error_model = error_model or ErrorModel()
    if mode == "plugin":
        sg = sigma_g(phi_at, moments, regime, error_model)
        return _invert_weight(sg.matrix, WeightSource.EFFICIENT_PLUGIN)
    if mode == "synthetic":
        n_synth = settings.N_SYNTH if n_synth is None else n_synth
        if n_synth < 2:
            raise InputError(f"synthetic weights need at least two simulated datasets, got {n_synth}")
        draws = synthetic_moments(phi_at, moments, error_model, n_synth, seed)
        S = np.atleast_2d(np.cov(draws, rowvar=False))
        return _invert_weight(S, WeightSource.SYNTHETIC_EMPIRICAL)
    raise InputError(f"Unknown weighting mode: {mode}")


def diagonal_weight(
    phi_at: Phi,
    moments: MomentBuilder,
    error_model: Optional[ErrorModel] = None,
    regime: Regime | str | None = None,
) -> WeightMatrix:
    sg = sigma_g(phi_at, moments, regime, error_model)
    return _diagonal_fallback(sg.matrix)


# Full estimator


def default_moment_lags(data: MisalignedDataset, p_angles: int = 1) -> tuple[list[LagSpec], list[LagSpec]]:
    lags_self = default_lags(data.station_locs)
    lags_cross = default_lags(data.station_locs, data.outcome_locs)
    if p_angles > 1:
        lags_self = directional_lags([l.r for l in lags_self], p_angles, lags_self[0].r_tol)
        lags_cross = directional_lags([l.r for l in lags_cross], p_angles, lags_cross[0].r_tol)
    return lags_self, lags_cross


def fit_mindist(
    data: MisalignedDataset,
    fit: FitResult,
    weights: str = "efficient",
    flavor: CrossFlavor | str | None = None,
    regime: Regime | str | None = None,
    lags_self: Optional[Sequence[LagSpec]] = None,
    lags_cross: Optional[Sequence[LagSpec]] = None,
    p_angles: int = 1,
    n_synth: int | None = None,
    seed: int = 0,
) -> tuple[MdResult, MomentBuilder]:
    """Krig-and-regress start, weighting, estimation and sandwich covariance"""
    if data.group is not None:
        raise InputError("minimum-distance estimation takes a single coefficient; drop the group column")
    regime = Regime(regime or settings.REGIME)

    kr = krig_and_regress(data, fit)
    start = Phi(beta=kr.beta_hat[0], theta=fit.theta_hat)
    error_model = ErrorModel(sigma2=kr.diagnostics["sigma2"])

    if lags_self is None or lags_cross is None:
        auto_self, auto_cross = default_moment_lags(data, p_angles)
        lags_self = auto_self if lags_self is None else lags_self
        lags_cross = auto_cross if lags_cross is None else lags_cross

    moments = build_moments(data, fit.mean_hat, lags_self, lags_cross, flavor, fit.theta_hat)

    if weights == "identity":
        B = WeightMatrix.identity(moments.K)
    elif weights == "diag":
        B = diagonal_weight(start, moments, error_model, regime)
    elif weights == "efficient":
        B = efficient_weight(start, moments, "plugin", error_model=error_model, regime=regime)
    elif weights == "synthetic":
        B = efficient_weight(start, moments, "synthetic", n_synth=n_synth, error_model=error_model, seed=seed)
    else:
        raise InputError(f"Unknown weights: {weights}")

    result = estimate(moments, B, start)
    sg = sigma_g(result.phi_hat, moments, regime, error_model)
    gamma = jacobian(moments, result.phi_hat)
    vcov = vcov_md(gamma, B.matrix, sg.matrix, sg.rate)

    logger.info(
        "Minimum distance: beta=%.6g objective=%.3g regime=%s weights=%s",
        result.phi_hat.beta,
        result.objective_at_min,
        regime.value,
        B.source.value,
    )
    result = result.model_copy(
        update={
            "regime": regime,
            "sigma_g_hat": sg.matrix,
            "vcov_phi": vcov,
            "diagnostics": {
                **result.diagnostics,
                "kr_beta": kr.beta_hat[0],
                "sigma2": error_model.sigma2,
                "rate": sg.rate,
                "tail_bound": sg.tail_bound,
            },
        }
    )
    return result, moments


def to_estimate(result: MdResult, level: float | None = None) -> RegressionEstimate:
    """β row of an MdResult with a normal interval from its large-sample standard error"""
    level = settings.CI_LEVEL if level is None else level
    if result.vcov_phi is None:
        raise InputError("minimum-distance result carries no covariance")
    se = float(result.se[0])
    z = stats.norm.ppf(0.5 + level / 2)
    beta = result.phi_hat.beta
    return RegressionEstimate(
        method="mindist",
        names=["beta"],
        beta_hat=[beta],
        se=[se],
        ci_low=[beta - z * se],
        ci_high=[beta + z * se],
        level=level,
        diagnostics={
            "inference": f"large-sample-{result.regime.value}",
            "objective": result.objective_at_min,
            "converged": result.converged,
            "sill": result.phi_hat.theta.sill,
            "range_km": result.phi_hat.theta.range_km,
            "weights": result.weight_source.value,
        },
    )
