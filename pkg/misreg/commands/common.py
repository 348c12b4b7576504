"""Options and helpers shared by the subcommands."""

import argparse
from typing import Iterable

from misreg.config import settings
from misreg.exceptions import InputError
from misreg.models.covariance import CovKind, CovParams, ErrorKind, ErrorModel, RegressionParams
from misreg.models.data import FieldSample, MeanBasis, MeanEstimate, SimConfig
from misreg.models.results import FitMethod, FitResult, RunConfig
from misreg.services.covfit import fit_covariance

# options that describe where things are or how to log, not what is estimated
PLUMBING = {"func", "config", "seed", "out", "log_level", "command"}


def add_common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value settings file; flags override it")
    parser.add_argument("--seed", type=int, default=0, help="master random seed (default: 0)")
    parser.add_argument("--out", default=".", help="output directory (default: current directory)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level")


def add_data_options(parser: argparse.ArgumentParser, outcomes: bool = True) -> None:
    parser.add_argument("--stations", required=True, help="stations CSV: id,x_km,y_km,value")
    if outcomes:
        parser.add_argument("--outcomes", required=True, help="outcomes CSV: id,x_km,y_km,y,ctrl_1..ctrl_p[,group]")


def add_model_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--kind", choices=[k.value for k in CovKind], help="covariance family (default: COV_KIND)")
    parser.add_argument("--nu", type=float, help="Matérn smoothness (default: MATERN_NU)")
    parser.add_argument("--nugget", type=float, help="fixed nugget variance (default: NUGGET)")
    parser.add_argument(
        "--mean",
        dest="basis",
        choices=[b.value for b in MeanBasis],
        default=MeanBasis.CONSTANT.value,
        help="mean of the regressor field (default: constant)",
    )
    parser.add_argument(
        "--fit-method",
        choices=[m.value for m in FitMethod],
        default=FitMethod.ML.value,
        help="covariance estimation method (default: ml)",
    )
    parser.add_argument(
        "--mean-method",
        choices=["gls", "ols"],
        default="gls",
        help="mean estimator under reml (default: gls)",
    )


def add_level_option(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--level", type=float, default=None, help="confidence level (default: CI_LEVEL)")


def add_simulation_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sill", type=float, default=1.0, help="field sill θ1 (default: 1)")
    parser.add_argument("--range", dest="range_km", type=float, default=1.0, help="field range θ2 in km (default: 1)")
    parser.add_argument("--sim-kind", choices=[k.value for k in CovKind], default="exponential")
    parser.add_argument("--sim-nu", type=float, default=None, help="Matérn smoothness of the simulated field")
    parser.add_argument("--sim-nugget", type=float, default=0.0)
    parser.add_argument("--field-mean", type=float, default=0.0, help="constant field mean (default: 0)")
    parser.add_argument("--beta", type=float, nargs="+", default=[1.0], help="slope(s); several give groups")
    parser.add_argument("--gamma", type=float, nargs="+", default=[0.0], help="control coefficients")
    parser.add_argument("--sigma2", type=float, default=0.0, help="iid regression error variance (default: 0)")
    parser.add_argument("--error-sill", type=float, default=None, help="sill of a spatial error component")
    parser.add_argument("--error-range", type=float, default=None, help="range of a spatial error component")


def sim_config(args: argparse.Namespace) -> SimConfig:
    try:
        return _sim_config(args)
    except ValueError as e:
        raise InputError(f"Invalid simulation settings: {e}") from e


def _sim_config(args: argparse.Namespace) -> SimConfig:
    theta = CovParams(
        kind=CovKind(args.sim_kind),
        sill=args.sill,
        range_km=args.range_km,
        nu=args.sim_nu if args.sim_nu is not None else (settings.MATERN_NU if args.sim_kind == "matern" else None),
        nugget=args.sim_nugget,
    )
    if args.error_sill is not None:
        error_model = ErrorModel(
            kind=ErrorKind.SPATIAL,
            sigma2=args.sigma2,
            cov=CovParams(sill=args.error_sill, range_km=args.error_range or args.range_km),
        )
    else:
        error_model = ErrorModel(sigma2=args.sigma2)
    return SimConfig(
        seed=args.seed,
        mean=MeanEstimate.constant(args.field_mean),
        theta=theta,
        reg=RegressionParams(beta=args.beta, gamma=args.gamma),
        error_model=error_model,
    )


def fit_from_args(stations: FieldSample, args: argparse.Namespace) -> FitResult:
    kwargs = {"kind": args.kind, "basis": MeanBasis(args.basis), "nu": args.nu, "nugget": args.nugget}
    if args.fit_method == FitMethod.REML.value:
        kwargs["mean_method"] = args.mean_method
    return fit_covariance(stations, args.fit_method, **kwargs)


def run_config(args: argparse.Namespace, input_keys: Iterable[str] = ()) -> RunConfig:
    """RunConfig from parsed arguments; inputs are the path-valued options"""
    input_keys = set(input_keys)
    values = vars(args)
    inputs = {k: str(values[k]) for k in sorted(input_keys) if values.get(k) is not None}
    options = {
        k: v for k, v in sorted(values.items()) if k not in PLUMBING and k not in input_keys
    }
    return RunConfig(
        subcommand=args.command,
        inputs=inputs,
        options=options,
        seed=args.seed,
        output_dir=str(args.out),
    )
