"""Tests for misreg.services.abc."""

import numpy as np
import pytest

from misreg.exceptions import InputError, NumericalError
from misreg.models.covariance import CovParams, Phi
from misreg.models.results import AbcConfig, BootstrapDraws, MomentKind, WeightMatrix
from misreg.services.abc import (
    GaussianProposal,
    abc_config,
    chain_estimate,
    chain_frame,
    default_weight_for_abc,
    fit_abc,
    objective,
    run_abc,
    run_chains,
)
from misreg.services.mindist import MomentBuilder, estimate

DISTANCES = np.array([0.5, 1.0, 2.0, 0.5, 1.0, 2.0, 3.0])
KINDS = [MomentKind.CROSS] * 3 + [MomentKind.SELF] * 4
TEMPLATE = CovParams(sill=1.0, range_km=1.0)


@pytest.fixture
def noisy_builder() -> MomentBuilder:
    truth = Phi(beta=1.2, theta=CovParams(sill=1.5, range_km=1.2))
    blank = MomentBuilder.from_arrays(np.zeros(7), DISTANCES, KINDS, TEMPLATE)
    empirical = blank.model_values(truth) + 0.05 * np.cos(np.arange(7))
    return MomentBuilder.from_arrays(empirical, DISTANCES, KINDS, TEMPLATE)


@pytest.fixture
def fitted(noisy_builder):
    B = WeightMatrix.identity(noisy_builder.K)
    md = estimate(noisy_builder, B, Phi(beta=1.0, theta=TEMPLATE))
    return B, md


def proposal_at(phi: Phi, scale: float = 0.02, seed: int = 0, xi: float = 1.0, J: int = 200) -> AbcConfig:
    z = np.array([phi.beta, np.log(phi.theta.sill), np.log(phi.theta.range_km)])
    return AbcConfig(xi=xi, J=J, proposal_mean=z, proposal_cov=scale**2 * np.eye(3), seed=seed)


class TestGaussianProposal:
    """Tests for the log-scale Gaussian proposal."""

    def test_degenerate_density_is_the_jacobian(self):
        q = GaussianProposal(np.zeros(3), np.zeros((3, 3)))
        assert q.degenerate
        assert q.log_density(np.array([0.0, 2.0, 4.0])) == pytest.approx(-np.log(8.0))

    def test_non_positive_covariance_parameters(self):
        q = GaussianProposal(np.zeros(3), np.eye(3))
        assert q.log_density(np.array([0.0, -1.0, 1.0])) == -np.inf

    def test_proposals_are_positive(self):
        q = GaussianProposal(np.zeros(3), np.eye(3))
        rng = np.random.default_rng(0)
        draws = np.array([q.propose(rng) for _ in range(50)])
        assert np.all(draws[:, 1:] > 0)

    def test_fitted_to_bootstrap_draws(self):
        draws = BootstrapDraws(betas=[[1.0], [2.0], [3.0]], thetas=[[1.0, 1.0], [np.e, 1.0], [np.e**2, 1.0]])
        cfg = abc_config(draws, xi=0.2, J=10)
        np.testing.assert_allclose(cfg.proposal_mean, [2.0, 1.0, 0.0])
        assert cfg.proposal_cov[0, 0] == pytest.approx(1.0)
        assert cfg.xi == 0.2

    def test_bootstrap_needs_a_single_slope(self):
        draws = BootstrapDraws(betas=[[1.0, 2.0]], thetas=[[1.0, 1.0]])
        with pytest.raises(InputError):
            GaussianProposal.from_bootstrap(draws)

    def test_bootstrap_needs_positive_covariances(self):
        draws = BootstrapDraws(betas=[[1.0]], thetas=[[-1.0, 1.0]])
        with pytest.raises(InputError):
            GaussianProposal.from_bootstrap(draws)


class TestRunAbc:
    """Tests for a single accept/reject chain."""

    def test_every_draw_inside_the_band(self, noisy_builder, fitted):
        B, md = fitted
        cfg = proposal_at(md.phi_hat)
        chain = run_abc(noisy_builder, B, md.phi_hat, cfg)
        assert chain.draws.shape == (200, 3)
        assert chain.accepted[0]
        assert np.all(chain.objectives <= (1.0 + cfg.xi) * chain.l_hat * (1 + 1e-9) + 1e-300)
        np.testing.assert_allclose(
            [objective(noisy_builder, B, d) for d in chain.draws[:5]], chain.objectives[:5], rtol=1e-12
        )

    def test_same_seed_same_chain(self, noisy_builder, fitted):
        B, md = fitted
        a = run_abc(noisy_builder, B, md.phi_hat, proposal_at(md.phi_hat, seed=3))
        b = run_abc(noisy_builder, B, md.phi_hat, proposal_at(md.phi_hat, seed=3))
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_zero_tolerance_keeps_the_estimate_reachable(self, noisy_builder, fitted):
        B, md = fitted
        cfg = proposal_at(md.phi_hat, scale=0.0, xi=0.0, J=5)
        chain = run_abc(noisy_builder, B, md.phi_hat, cfg)
        np.testing.assert_allclose(chain.draws, np.tile(md.phi_hat.to_vector(), (5, 1)), rtol=1e-12)

    def test_mislocated_proposal(self, noisy_builder, fitted):
        B, md = fitted
        far = Phi(beta=50.0, theta=CovParams(sill=40.0, range_km=30.0))
        with pytest.raises(NumericalError, match="tolerance too tight"):
            run_abc(noisy_builder, B, md.phi_hat, proposal_at(far, scale=0.01, xi=0.0, J=5))

    def test_wider_tolerance_accepts_more(self, noisy_builder, fitted):
        B, md = fitted
        rates = [
            run_abc(noisy_builder, B, md.phi_hat, proposal_at(md.phi_hat, scale=0.05, seed=11, xi=xi, J=2000))
            .acceptance_rate
            for xi in (0.1, 0.5, 2.0)
        ]
        assert rates[0] <= rates[1] <= rates[2]
        assert rates[0] < rates[2]

    def test_unbounded_tolerance_leaves_only_the_density_ratio(self, noisy_builder, fitted):
        """Once the band holds every proposal, the chain moves toward lower proposal density"""
        B, md = fitted
        wide = run_abc(noisy_builder, B, md.phi_hat, proposal_at(md.phi_hat, scale=0.05, seed=5, xi=1e8, J=2000))
        wider = run_abc(noisy_builder, B, md.phi_hat, proposal_at(md.phi_hat, scale=0.05, seed=5, xi=1e10, J=2000))
        np.testing.assert_array_equal(wide.draws, wider.draws)

        cfg = proposal_at(md.phi_hat, scale=0.05)
        q = GaussianProposal(cfg.proposal_mean, cfg.proposal_cov)
        rng = np.random.default_rng(6)
        fresh = np.mean([q.log_density(q.propose(rng)) for _ in range(2000)])
        retained = np.mean([q.log_density(d) for d in wide.draws])
        assert retained < fresh

    def test_proposal_must_be_three_dimensional(self, noisy_builder, fitted):
        B, md = fitted
        cfg = AbcConfig(proposal_mean=np.zeros(2), proposal_cov=np.eye(2))
        with pytest.raises(InputError):
            run_abc(noisy_builder, B, md.phi_hat, cfg)


class TestChains:
    """Tests for pooled chains and their summaries."""

    def test_threads_do_not_change_the_chains(self, noisy_builder, fitted):
        B, md = fitted
        cfg = proposal_at(md.phi_hat, J=50)
        serial = run_chains(noisy_builder, B, md.phi_hat, cfg, n_chains=2, workers=1)
        threaded = run_chains(noisy_builder, B, md.phi_hat, cfg, n_chains=2, workers=2)
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.draws, b.draws)
        assert not np.array_equal(serial[0].draws, serial[1].draws)

    def test_summary_and_trace(self, noisy_builder, fitted):
        B, md = fitted
        chains = run_chains(noisy_builder, B, md.phi_hat, proposal_at(md.phi_hat, J=60), n_chains=2, workers=1)
        est = chain_estimate(chains, level=0.9, xi=1.0)
        assert est.method == "mindist-abc"
        assert est.ci_low[0] <= est.beta_hat[0] <= est.ci_high[0]
        assert est.diagnostics["draws"] == 120

        frame = chain_frame(chains)
        assert len(frame) == 120
        assert list(frame.columns) == ["chain", "step", "beta", "sill", "range_km", "objective", "accepted"]

    def test_no_chains(self):
        with pytest.raises(InputError):
            chain_estimate([])

    def test_unknown_weighting(self, noisy_builder):
        with pytest.raises(InputError):
            default_weight_for_abc(Phi(beta=1.0, theta=TEMPLATE), noisy_builder, option="plugin")


@pytest.mark.slow
class TestFitAbc:
    """End-to-end sampler on a simulated lattice."""

    def test_pipeline(self, lattice_data, true_fit):
        data, _ = lattice_data
        est, chains, md = fit_abc(data, true_fit, xi=0.5, J=100, n_chains=1, n_synth=40, seed=1)
        assert len(chains) == 1
        assert chains[0].draws.shape == (100, 3)
        assert est.diagnostics["xi"] == 0.5
        assert md.objective_at_min >= 0
