"""fit: covariance and mean estimation from the stations alone."""

import argparse

from misreg.commands.common import add_common_options, add_data_options, add_model_options, fit_from_args, run_config
from misreg.services.empvario import empirical_variogram, to_frame
from misreg.services.geometry import default_lags
from misreg.services.ingest import read_stations
from misreg.services.reporting import emit_report

NAME = "fit"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="fit the covariance of the regressor field by ML or REML")
    add_data_options(parser, outcomes=False)
    add_model_options(parser)
    parser.add_argument("--variogram", action="store_true", help="also write the empirical variogram table")
    add_common_options(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    stations = read_stations(args.stations)
    fit = fit_from_args(stations, args)

    extra = None
    if args.variogram:
        vario = empirical_variogram(stations, fit.mean_hat, default_lags(stations.coords))
        extra = {"variogram": to_frame(vario)}

    notes = [] if fit.converged else ["the optimizer did not converge; treat the estimates with care"]
    if fit.vcov_degenerate:
        notes.append("the information matrix is singular; standard errors are degenerate")
    emit_report(fit, args.out, "fit", run_config(args, ["stations"]), extra=extra, notes=notes)
    return 0
