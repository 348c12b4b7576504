"""krig: fit the regressor field at the stations and predict it at target locations."""

import argparse
import logging

from misreg.commands.common import add_common_options, add_data_options, add_model_options, fit_from_args, run_config
from misreg.models.data import MeanBasis
from misreg.services.ingest import read_stations, read_targets
from misreg.services.kriging import blup, eblup, leave_one_out
from misreg.services.reporting import emit_report, prediction_frame

logger = logging.getLogger(__name__)

NAME = "krig"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="predict the regressor field at target locations")
    add_data_options(parser, outcomes=False)
    parser.add_argument("--targets", required=True, help="targets CSV: id,x_km,y_km")
    add_model_options(parser)
    parser.add_argument(
        "--predictor",
        choices=["eblup", "blup"],
        default="eblup",
        help="plug-in fitted mean (eblup) or GLS mean at the fitted covariance (blup)",
    )
    parser.add_argument("--loo", action="store_true", help="also write leave-one-out residuals at the stations")
    add_common_options(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    stations = read_stations(args.stations)
    ids, targets = read_targets(args.targets)
    fit = fit_from_args(stations, args)

    if args.predictor == "blup":
        pred = blup(fit.theta_hat, MeanBasis(args.basis), stations, targets)
    else:
        pred = eblup(fit, stations, targets)

    extra = {"loo": leave_one_out(fit, stations)} if args.loo else None
    emit_report(
        prediction_frame(pred, ids),
        args.out,
        "predictions",
        run_config(args, ["stations", "targets"]),
        extra=extra,
        notes=[f"{fit.method.value} fit: sill={fit.theta_hat.sill:.6g}, range={fit.theta_hat.range_km:.6g} km"],
    )
    return 0
