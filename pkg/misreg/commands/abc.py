"""abc: accept/reject sampling around the minimum-distance estimate."""

import argparse

from misreg.commands.common import (
    add_common_options,
    add_data_options,
    add_level_option,
    add_model_options,
    fit_from_args,
    run_config,
)
from misreg.services.abc import chain_frame, fit_abc
from misreg.services.ingest import ingest
from misreg.services.reporting import emit_report
from misreg.services.twostep import two_step_bootstrap

NAME = "abc"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="minimum-distance inference by accept/reject sampling")
    add_data_options(parser)
    add_model_options(parser)
    parser.add_argument("--xi", type=float, default=None, help="objective tolerance ξ (default: ABC_XI)")
    parser.add_argument("--chain-length", type=int, default=None, help="retained draws J (default: ABC_CHAIN_LENGTH)")
    parser.add_argument("--chains", type=int, default=None, help="independent chains (default: ABC_CHAINS)")
    parser.add_argument("--weights", choices=["synthetic", "identity"], default="synthetic")
    parser.add_argument("--bootstrap", type=int, default=None, help="bootstrap draws behind the proposal")
    parser.add_argument("--n-synth", type=int, default=None, help="synthetic datasets for the weights")
    add_level_option(parser)
    add_common_options(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    data = ingest(args.stations, args.outcomes)
    fit = fit_from_args(data.stations, args)

    bootstrap = None
    if args.bootstrap is not None:
        _, bootstrap = two_step_bootstrap(data, fit, args.bootstrap, seed=args.seed)

    estimate, chains, md = fit_abc(
        data,
        fit,
        xi=args.xi,
        J=args.chain_length,
        n_chains=args.chains,
        weights=args.weights,
        bootstrap=bootstrap,
        n_synth=args.n_synth,
        seed=args.seed,
        level=args.level,
    )
    notes = [
        f"chain {c}: acceptance rate {chain.acceptance_rate:.4f} over {chain.proposals} proposals"
        for c, chain in enumerate(chains)
    ]
    notes.append(f"objective at the estimate: {md.objective_at_min:.6g}")
    emit_report(
        estimate,
        args.out,
        "abc",
        run_config(args, ["stations", "outcomes"]),
        extra={"draws": chain_frame(chains)},
        notes=notes,
    )
    return 0
