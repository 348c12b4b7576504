"""mindist: one-step minimum-distance estimation of (β, θ)."""

import argparse

from misreg.commands.common import (
    add_common_options,
    add_data_options,
    add_level_option,
    add_model_options,
    fit_from_args,
    run_config,
)
from misreg.models.results import CrossFlavor, Regime
from misreg.services.ingest import ingest, read_lags
from misreg.services.mindist import fit_mindist, to_estimate
from misreg.services.reporting import emit_report, estimate_frame, moment_frame

NAME = "mindist"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="minimum-distance estimation from cross and self variogram moments")
    add_data_options(parser)
    add_model_options(parser)
    parser.add_argument(
        "--weights",
        choices=["identity", "diag", "efficient", "synthetic"],
        default="efficient",
        help="weighting matrix (default: efficient)",
    )
    parser.add_argument("--flavor", choices=[f.value for f in CrossFlavor], default=None)
    parser.add_argument("--iso-angles", type=int, default=1, help="directions per distance bin (default: 1)")
    parser.add_argument("--regime", choices=[r.value for r in Regime], default=None)
    parser.add_argument("--lags", default="auto", help="lag grid CSV (kind,r,r_tol[,angle,angle_tol]) or auto")
    parser.add_argument("--n-synth", type=int, default=None, help="synthetic datasets for synthetic weights")
    add_level_option(parser)
    add_common_options(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    data = ingest(args.stations, args.outcomes)
    lags_self = lags_cross = None
    if args.lags != "auto":
        lags_self, lags_cross = read_lags(args.lags)

    fit = fit_from_args(data.stations, args)
    result, moments = fit_mindist(
        data,
        fit,
        weights=args.weights,
        flavor=args.flavor,
        regime=args.regime,
        lags_self=lags_self,
        lags_cross=lags_cross,
        p_angles=args.iso_angles,
        n_synth=args.n_synth,
        seed=args.seed,
    )

    inputs = ["stations", "outcomes"] + (["lags"] if args.lags != "auto" else [])
    notes = []
    if not result.converged:
        notes.append("the optimizer did not converge")
    if not result.starts_agree:
        notes.append("possible non-identification: starts disagree at the same objective")
    emit_report(
        result,
        args.out,
        "mindist",
        run_config(args, inputs),
        extra={
            "beta": estimate_frame([to_estimate(result, args.level)]),
            "moments": moment_frame(moments.evaluate(result.phi_hat), moments.empirical),
        },
        notes=notes,
    )
    return 0
