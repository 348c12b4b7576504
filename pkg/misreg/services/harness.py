"""Monte Carlo comparisons of the estimators.

Two designs: simulated lattices with stations on one checkerboard color and
outcomes on the other, and repeated random half-splits of an aligned dataset.
Every run draws from its own stream derived from (seed, run index).
"""

import concurrent.futures as cf
import logging
import re
from typing import Sequence

import numpy as np
import pandas as pd
import statsmodels.api as sm
from tqdm import tqdm

from misreg.config import settings
from misreg.exceptions import InputError, MisregError, NumericalError
from misreg.models.data import AlignedDataset, FieldSample, MisalignedDataset, SimConfig
from misreg.models.results import EstimatorOptions, ExperimentReport, MethodRow, RegressionEstimate
from misreg.services.abc import fit_abc
from misreg.services.covfit import fit_covariance, fit_ml
from misreg.services.covmodel import cov_matrix
from misreg.services.fieldsim import simulate_misaligned
from misreg.services.geometry import make_lattice
from misreg.services.mindist import fit_mindist, to_estimate
from misreg.services.twostep import krig_and_regress, nn_regress, two_step_bootstrap
from misreg.utils.helpers import derive_rng, derive_seed

logger = logging.getLogger(__name__)

METHODS = ("nn-1", "nn-4", "kr-naive", "kr-bootstrap", "mindist", "mindist-abc")
NN_PATTERN = re.compile(r"^nn-(\d+)$")


def check_methods(methods: Sequence[str]) -> list[str]:
    methods = list(methods)
    if not methods:
        raise InputError("no methods requested")
    for method in methods:
        if method not in METHODS and not NN_PATTERN.match(method):
            raise InputError(f"Unknown method: {method}. Known: {', '.join(METHODS)}")
    return methods


def checkerboard_split(side: int, spacing: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Stations on cells with even i + j, outcomes on the odd ones"""
    lattice = make_lattice(side, spacing)
    cells = np.rint(lattice / spacing).astype(int)
    even = (cells.sum(axis=1) % 2) == 0
    return lattice[even], lattice[~even]


def half_split(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random station half and outcome half of n indices"""
    order = rng.permutation(n)
    return np.sort(order[: n // 2]), np.sort(order[n // 2:])


def _run_seed(seed: int, run: int) -> int:
    return int(derive_seed(seed, run).generate_state(1)[0])


def run_methods(
    data: MisalignedDataset,
    methods: Sequence[str],
    options: EstimatorOptions,
    seed: int = 0,
) -> dict[str, RegressionEstimate | MisregError]:
    """Every requested estimator on one dataset; failures are returned, not raised"""
    out: dict[str, RegressionEstimate | MisregError] = {}
    fit = None
    fit_error = None
    bootstrap = None

    if any(not NN_PATTERN.match(m) for m in methods):
        try:
            fit = fit_covariance(data.stations, options.fit_method)
        except MisregError as e:
            fit_error = e

    for method in methods:
        nn = NN_PATTERN.match(method)
        if nn:
            out[method] = _safe(lambda: nn_regress(data, int(nn.group(1)), options.level))
        elif fit_error is not None:
            out[method] = fit_error
        elif method == "kr-naive":
            out[method] = _safe(lambda: krig_and_regress(data, fit, options.level))
        elif method == "kr-bootstrap":
            try:
                est, bootstrap = two_step_bootstrap(
                    data, fit, options.bootstrap_draws, options.level, seed=seed, workers=1
                )
                out[method] = est
            except MisregError as e:
                out[method] = e
        elif method == "mindist":
            out[method] = _safe(
                lambda: to_estimate(
                    fit_mindist(
                        data,
                        fit,
                        weights=options.md_weights,
                        regime=options.regime,
                        p_angles=options.p_angles,
                        n_synth=options.n_synth,
                        seed=seed,
                    )[0],
                    options.level,
                )
            )
        elif method == "mindist-abc":
            out[method] = _safe(
                lambda: fit_abc(
                    data,
                    fit,
                    xi=options.xi,
                    J=options.abc_chain_length,
                    n_chains=1,
                    weights=options.abc_weights,
                    bootstrap=bootstrap,
                    n_synth=options.n_synth,
                    seed=seed,
                    level=options.level,
                    p_angles=options.p_angles,
                )[0]
            )
    return out


def _safe(call) -> RegressionEstimate | MisregError:
    try:
        return call()
    except MisregError as e:
        logger.debug("estimator failed: %s", e)
        return e
    except np.linalg.LinAlgError as e:
        logger.debug("estimator failed: %s", e)
        return NumericalError(f"linear algebra failed: {e}")


def summarize(
    method: str,
    estimates: Sequence[RegressionEstimate],
    truth: float,
    failures: int,
) -> MethodRow:
    """Table row for one method: bias, spread, standard-error accuracy and coverage of β"""
    runs = len(estimates)
    if runs == 0:
        raise NumericalError(f"{method} failed in every run")

    frame = pd.DataFrame(
        {
            "beta": [e.beta_hat[0] for e in estimates],
            "se": [e.se[0] for e in estimates],
            "covered": [e.covers(truth) for e in estimates],
        }
    )
    sd = float(frame["beta"].std(ddof=1)) if runs > 1 else 0.0
    coverage = float(frame["covered"].mean())
    return MethodRow(
        method=method,
        inference=str(estimates[0].diagnostics.get("inference", "")),
        mean_beta=float(frame["beta"].mean()),
        rmse=float(np.sqrt(np.mean((frame["beta"] - truth) ** 2))),
        sd=sd,
        mean_se=float(frame["se"].mean()),
        rmse_se=float(np.sqrt(np.mean((frame["se"] - sd) ** 2))),
        coverage=coverage,
        coverage_se=float(np.sqrt(coverage * (1.0 - coverage) / runs)),
        runs=runs,
        failures=failures,
    )


def _aggregate(
    design: str,
    truth: float,
    methods: list[str],
    per_run: list[dict[str, RegressionEstimate | MisregError]],
) -> ExperimentReport:
    n_runs = len(per_run)
    rows = []
    for method in methods:
        good = [r[method] for r in per_run if isinstance(r.get(method), RegressionEstimate)]
        failures = n_runs - len(good)
        if failures > settings.MAX_FAILURE_SHARE * n_runs:
            reasons = {str(r[method]) for r in per_run if isinstance(r.get(method), MisregError)}
            raise NumericalError(
                f"{method} failed in {failures} of {n_runs} runs: {'; '.join(sorted(reasons))}"
            )
        if failures:
            logger.warning("%s failed in %d of %d runs; those runs are excluded", method, failures, n_runs)
        rows.append(summarize(method, good, truth, failures))
    return ExperimentReport(design=design, truth=truth, runs_attempted=n_runs, rows=rows)


def _run_all(one_run, n_runs: int, workers: int | None, desc: str) -> list:
    workers = settings.WORKERS if workers is None else workers
    progress = dict(total=n_runs, desc=desc, disable=not settings.SHOW_PROGRESS, dynamic_ncols=True)
    if workers > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as ex:
            return list(tqdm(ex.map(one_run, range(n_runs)), **progress))
    return [one_run(r) for r in tqdm(range(n_runs), **progress)]


def lattice_experiment(
    cfg: SimConfig,
    side: int,
    n_runs: int,
    methods: Sequence[str] = METHODS,
    seed: int = 0,
    options: EstimatorOptions | None = None,
    spacing: float = 1.0,
    workers: int | None = None,
) -> ExperimentReport:
    """Repeated simulation on a side x side lattice, checkerboard misalignment"""
    methods = check_methods(methods)
    options = options or EstimatorOptions()
    if len(cfg.reg.beta) != 1:
        raise InputError("the lattice experiment takes a single regression coefficient")
    if side < 4:
        raise InputError(f"Lattice side must be at least 4, got {side}")
    if n_runs < 1:
        raise InputError(f"Number of runs must be positive, got {n_runs}")

    stations, outcomes = checkerboard_split(side, spacing)

    def one_run(run: int):
        rng = derive_rng(seed, run)
        data, _ = simulate_misaligned(cfg, outcomes, stations, rng=rng)
        return run_methods(data, methods, options, seed=_run_seed(seed, run))

    per_run = _run_all(one_run, n_runs, workers, "lattice")
    report = _aggregate(f"lattice {side}x{side}", cfg.reg.beta[0], methods, per_run)
    logger.info("Lattice experiment: %d runs, %d methods", n_runs, len(methods))
    return report


def full_data_gls(aligned: AlignedDataset) -> float:
    """β from GLS on the aligned data, weighting with an exponential fit to the OLS residuals"""
    X = np.column_stack([aligned.r, aligned.F])
    try:
        ols = sm.OLS(aligned.y, X).fit()
    except Exception as e:
        raise NumericalError(f"OLS failed: {e}") from e

    resid = FieldSample(coords=aligned.coords, values=np.asarray(ols.resid))
    error_fit = fit_ml(resid, kind="exponential")
    sigma = cov_matrix(error_fit.theta_hat, aligned.coords)
    try:
        gls = sm.GLS(aligned.y, X, sigma=sigma).fit()
    except Exception as e:
        raise NumericalError(f"GLS failed: {e}") from e

    beta = float(np.asarray(gls.params)[0])
    logger.info("Full-data GLS reference: beta=%.6g (OLS %.6g)", beta, float(np.asarray(ols.params)[0]))
    return beta


def crossval_experiment(
    aligned: AlignedDataset,
    n_runs: int,
    truth: float | None = None,
    methods: Sequence[str] = METHODS,
    seed: int = 0,
    options: EstimatorOptions | None = None,
    workers: int | None = None,
) -> ExperimentReport:
    """Hide R on a random half and Y on the other, repeatedly; truth from full-data GLS unless given"""
    methods = check_methods(methods)
    options = options or EstimatorOptions()
    if n_runs < 1:
        raise InputError(f"Number of runs must be positive, got {n_runs}")
    if truth is None:
        truth = full_data_gls(aligned)

    n = aligned.coords.shape[0]

    def one_run(run: int):
        rng = derive_rng(seed, run)
        station_idx, outcome_idx = half_split(n, rng)
        try:
            data = aligned.split(station_idx, outcome_idx)
        except ValueError as e:
            logger.debug("Run %d: unusable split: %s", run, e)
            failure = InputError(f"split of run {run} is unusable: {e}")
            return {method: failure for method in methods}
        return run_methods(data, methods, options, seed=_run_seed(seed, run))

    per_run = _run_all(one_run, n_runs, workers, "crossval")
    report = _aggregate(f"crossval n={n}", truth, methods, per_run)
    logger.info("Cross-validation experiment: %d runs, %d methods", n_runs, len(methods))
    return report
