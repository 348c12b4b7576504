"""krig-regress: regress outcomes on the kriged regressor, with naive or bootstrap inference,
or on a nearest-neighbor average as a baseline."""

import argparse

from misreg.commands.common import (
    add_common_options,
    add_data_options,
    add_level_option,
    add_model_options,
    fit_from_args,
    run_config,
)
from misreg.services.ingest import ingest
from misreg.services.reporting import bootstrap_frame, emit_report
from misreg.services.twostep import krig_and_regress, nn_regress, two_step_bootstrap

NAME = "krig-regress"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="krig-and-regress with naive or two-step bootstrap inference")
    add_data_options(parser)
    add_model_options(parser)
    parser.add_argument("--bootstrap", type=int, default=0, help="two-step bootstrap draws J (0: naive only)")
    parser.add_argument("--ci-method", choices=["percentile", "normal"], default=None)
    parser.add_argument("--nn", type=int, default=None, help="nearest-neighbor baseline with k stations")
    parser.add_argument("--workers", type=int, default=None, help="threads for the bootstrap (default: WORKERS)")
    add_level_option(parser)
    add_common_options(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    data = ingest(args.stations, args.outcomes)
    rc = run_config(args, ["stations", "outcomes"])

    if args.nn is not None:
        emit_report(nn_regress(data, args.nn, args.level), args.out, "estimates", rc)
        return 0

    fit = fit_from_args(data.stations, args)
    estimates = [krig_and_regress(data, fit, args.level)]
    extra = None
    if args.bootstrap > 0:
        boot, draws = two_step_bootstrap(
            data,
            fit,
            args.bootstrap,
            args.level,
            seed=args.seed,
            ci_method=args.ci_method,
            workers=args.workers,
        )
        estimates.append(boot)
        extra = {"draws": bootstrap_frame(draws, boot.names)}
    emit_report(estimates, args.out, "estimates", rc, extra=extra)
    return 0

