"""Accept/reject sampler around the minimum-distance objective.

A proposal φ* is kept when its objective is within a factor (1 + ξ) of the
objective at the estimate, thinned by the proposal density ratio. The chain
never needs the moment covariance Σ_g.
"""

import concurrent.futures as cf
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from misreg.config import settings
from misreg.exceptions import InputError, NumericalError
from misreg.models.covariance import ErrorModel, Phi
from misreg.models.data import MisalignedDataset
from misreg.models.results import (
    AbcChain,
    AbcConfig,
    BootstrapDraws,
    FitResult,
    MdResult,
    RegressionEstimate,
    WeightMatrix,
)
from misreg.services.mindist import MomentBuilder, build_moments, default_moment_lags, efficient_weight, estimate
from misreg.services.twostep import GaussianSampler, krig_and_regress, two_step_bootstrap
from misreg.utils.helpers import derive_rng, quantile_interval

logger = logging.getLogger(__name__)

PROPOSAL_BUDGET_FACTOR = 10


class GaussianProposal(GaussianSampler):
    """Gaussian q on (β, log θ1, log θ2); densities are reported on the natural scale"""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        super().__init__(mean, cov)
        self.cov = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
        self.degenerate = float(np.abs(self.cov).max(initial=0.0)) == 0.0
        self._law = None if self.degenerate else stats.multivariate_normal(self.mean, self.cov, allow_singular=True)

    @classmethod
    def from_bootstrap(cls, draws: BootstrapDraws) -> "GaussianProposal":
        if draws.betas.shape[1] != 1:
            raise InputError("the proposal takes a single regression coefficient")
        if np.any(draws.thetas <= 0):
            raise InputError("bootstrap covariance draws must be positive")
        z = np.column_stack([draws.betas[:, 0], np.log(draws.thetas)])
        cov = np.cov(z, rowvar=False) if draws.J > 1 else np.zeros((3, 3))
        return cls(z.mean(axis=0), np.atleast_2d(cov))

    @staticmethod
    def to_natural(z: np.ndarray) -> np.ndarray:
        return np.concatenate([z[:1], np.exp(z[1:])])

    def propose(self, rng: np.random.Generator) -> np.ndarray:
        return self.to_natural(self.draw(rng))

    def log_density(self, phi_vec: np.ndarray) -> float:
        """log q(φ) = log q_z(β, log θ) - log θ1 - log θ2"""
        if np.any(phi_vec[1:] <= 0):
            return -np.inf
        jacobian = -float(np.sum(np.log(phi_vec[1:])))
        if self._law is None:
            return jacobian
        return float(self._law.logpdf(np.concatenate([phi_vec[:1], np.log(phi_vec[1:])]))) + jacobian


def abc_config(
    draws: BootstrapDraws,
    xi: float | None = None,
    J: int | None = None,
    seed: int = 0,
) -> AbcConfig:
    """Sampler settings with the proposal fitted to two-step bootstrap draws"""
    q = GaussianProposal.from_bootstrap(draws)
    return AbcConfig(
        xi=settings.ABC_XI if xi is None else xi,
        J=settings.ABC_CHAIN_LENGTH if J is None else J,
        proposal_mean=q.mean,
        proposal_cov=q.cov,
        seed=seed,
    )


def objective(moments: MomentBuilder, B: WeightMatrix, phi_vec: np.ndarray) -> float:
    g = moments.g(phi_vec)
    return float(g @ B.matrix @ g)


def run_abc(
    moments: MomentBuilder,
    B: WeightMatrix,
    phi_hat: Phi,
    cfg: AbcConfig,
    chain_index: Optional[int] = None,
) -> AbcChain:
    """One chain of cfg.J retained draws, started at the first proposal inside the tolerance band"""
    if cfg.proposal_mean.shape[0] != 3 or cfg.proposal_cov.shape != (3, 3):
        raise InputError("the proposal must be three-dimensional over (beta, log sill, log range)")

    q = GaussianProposal(cfg.proposal_mean, cfg.proposal_cov)
    rng = derive_rng(cfg.seed, chain_index)
    l_hat = objective(moments, B, phi_hat.to_vector())
    # floating-point slack so that φ̂ itself passes at ξ = 0
    threshold = (1.0 + cfg.xi) * l_hat * (1.0 + 1e-12) + 1e-300
    budget = PROPOSAL_BUDGET_FACTOR * cfg.J

    def inside(phi_vec: np.ndarray) -> tuple[bool, float]:
        if not np.all(np.isfinite(phi_vec)) or np.any(phi_vec[1:] <= 0):
            return False, np.inf
        value = objective(moments, B, phi_vec)
        return bool(np.isfinite(value) and value <= threshold), value

    proposals = 0
    current = None
    while proposals < budget:
        candidate = q.propose(rng)
        proposals += 1
        ok, value = inside(candidate)
        if ok:
            current, current_l = candidate, value
            break
    if current is None:
        raise NumericalError(
            f"tolerance too tight or proposal mislocated: no proposal accepted in {budget} tries"
        )

    draws = np.empty((cfg.J, 3))
    objectives = np.empty(cfg.J)
    accepted = np.zeros(cfg.J, dtype=bool)
    draws[0], objectives[0], accepted[0] = current, current_l, True
    log_q_current = q.log_density(current)

    for j in range(1, cfg.J):
        candidate = q.propose(rng)
        u = rng.uniform()
        proposals += 1
        ok, value = inside(candidate)
        if ok:
            log_q_candidate = q.log_density(candidate)
            # the density ratio is not capped at one
            if np.log(u) <= log_q_current - log_q_candidate:
                current, current_l, log_q_current = candidate, value, log_q_candidate
                accepted[j] = True
        draws[j], objectives[j] = current, current_l

    chain = AbcChain(draws=draws, accepted=accepted, objectives=objectives, l_hat=l_hat, proposals=proposals)
    logger.info("ABC chain: %d draws, acceptance rate %.3f, xi=%g", cfg.J, chain.acceptance_rate, cfg.xi)
    if chain.acceptance_rate < 0.01 or chain.acceptance_rate > 0.95:
        logger.warning(
            "ABC acceptance rate %.3f is extreme; inspect the acceptance ratio and the trace plots",
            chain.acceptance_rate,
        )
    return chain


def run_chains(
    moments: MomentBuilder,
    B: WeightMatrix,
    phi_hat: Phi,
    cfg: AbcConfig,
    n_chains: int | None = None,
    workers: int | None = None,
) -> list[AbcChain]:
    """Independent chains, seeded by (cfg.seed, chain index), run concurrently"""
    n_chains = settings.ABC_CHAINS if n_chains is None else n_chains
    workers = settings.WORKERS if workers is None else workers
    if n_chains < 1:
        raise InputError(f"Number of chains must be positive, got {n_chains}")
    if n_chains == 1:
        return [run_abc(moments, B, phi_hat, cfg)]

    def one(c: int) -> AbcChain:
        return run_abc(moments, B, phi_hat, cfg, chain_index=c)

    if workers > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, range(n_chains)))
    return [one(c) for c in range(n_chains)]


def chain_estimate(
    chains: AbcChain | Sequence[AbcChain],
    level: float | None = None,
    xi: float | None = None,
) -> RegressionEstimate:
    """β summary of pooled chains: mean, standard deviation and percentile interval"""
    level = settings.CI_LEVEL if level is None else level
    chains = [chains] if isinstance(chains, AbcChain) else list(chains)
    if not chains:
        raise InputError("no chains to summarize")

    betas = np.concatenate([c.draws[:, 0] for c in chains])
    lo, hi = quantile_interval(betas, level)
    sd = float(betas.std(ddof=1)) if betas.shape[0] > 1 else 0.0
    return RegressionEstimate(
        method="mindist-abc",
        names=["beta"],
        beta_hat=[float(betas.mean())],
        se=[sd],
        ci_low=[float(lo)],
        ci_high=[float(hi)],
        level=level,
        diagnostics={
            "inference": "abc-percentile",
            "chains": len(chains),
            "draws": int(betas.shape[0]),
            "acceptance_rate": float(np.mean([c.acceptance_rate for c in chains])),
            "xi": xi,
        },
    )


def chain_frame(chains: AbcChain | Sequence[AbcChain]) -> pd.DataFrame:
    """Trace table of every chain, one row per retained draw"""
    chains = [chains] if isinstance(chains, AbcChain) else list(chains)
    frames = [
        pd.DataFrame(
            {
                "chain": c_idx,
                "step": np.arange(c.draws.shape[0]),
                "beta": c.draws[:, 0],
                "sill": c.draws[:, 1],
                "range_km": c.draws[:, 2],
                "objective": c.objectives,
                "accepted": c.accepted,
            }
        )
        for c_idx, c in enumerate(chains)
    ]
    return pd.concat(frames, ignore_index=True)


def default_weight_for_abc(
    phi_kr: Phi,
    moments: MomentBuilder,
    n_synth: int | None = None,
    option: str = "synthetic",
    error_model: Optional[ErrorModel] = None,
    seed: int = 0,
) -> WeightMatrix:
    """B̃ for the chain: inverse empirical moment covariance over synthetic data at the
    krig-and-regress estimate (iid errors), or the identity"""
    if option == "identity":
        return WeightMatrix.identity(moments.K)
    if option == "synthetic":
        return efficient_weight(phi_kr, moments, "synthetic", n_synth=n_synth, error_model=error_model, seed=seed)
    raise InputError(f"Unknown ABC weighting option: {option}")


def fit_abc(
    data: MisalignedDataset,
    fit: FitResult,
    xi: float | None = None,
    J: int | None = None,
    n_chains: int | None = None,
    weights: str = "synthetic",
    bootstrap: Optional[BootstrapDraws] = None,
    n_synth: int | None = None,
    seed: int = 0,
    level: float | None = None,
    p_angles: int = 1,
) -> tuple[RegressionEstimate, list[AbcChain], MdResult]:
    """Weighting at the krig-and-regress start, the estimate φ̂ under the same weights,
    a bootstrap-fitted proposal and the chains"""
    kr = krig_and_regress(data, fit)
    phi_kr = Phi(beta=kr.beta_hat[0], theta=fit.theta_hat)
    error_model = ErrorModel(sigma2=kr.diagnostics["sigma2"])

    lags_self, lags_cross = default_moment_lags(data, p_angles)
    moments = build_moments(data, fit.mean_hat, lags_self, lags_cross, template=fit.theta_hat)
    B = default_weight_for_abc(phi_kr, moments, n_synth, weights, error_model, seed)
    md = estimate(moments, B, phi_kr)

    if bootstrap is None:
        _, bootstrap = two_step_bootstrap(data, fit, seed=seed)
    cfg = abc_config(bootstrap, xi, J, seed)

    chains = run_chains(moments, B, md.phi_hat, cfg, n_chains)
    return chain_estimate(chains, level, cfg.xi), chains, md
