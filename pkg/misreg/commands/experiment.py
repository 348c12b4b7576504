"""experiment: Monte Carlo comparison of the estimators."""

import argparse

from misreg.commands.common import add_common_options, add_simulation_options, run_config, sim_config
from misreg.exceptions import InputError
from misreg.models.results import EstimatorOptions, Regime
from misreg.services.harness import METHODS, check_methods, crossval_experiment, lattice_experiment
from misreg.services.ingest import ingest_aligned
from misreg.services.reporting import emit_report

NAME = "experiment"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="Monte Carlo comparison of estimators on a lattice or by cross-validation")
    parser.add_argument("--design", choices=["lattice", "crossval"], default="lattice")
    parser.add_argument("--runs", type=int, default=200, help="Monte Carlo runs (default: 200)")
    parser.add_argument(
        "--methods",
        default=",".join(METHODS),
        help=f"comma-separated methods (default: {','.join(METHODS)}; nn-k for any k)",
    )
    parser.add_argument("--side", type=int, default=15, help="lattice side (default: 15)")
    parser.add_argument("--spacing", type=float, default=1.0, help="lattice spacing in km (default: 1)")
    parser.add_argument("--aligned", help="crossval: aligned CSV id,x_km,y_km,r,y,ctrl_1..ctrl_p")
    parser.add_argument("--truth", type=float, default=None, help="crossval: reference beta (default: full-data GLS)")
    parser.add_argument("--bootstrap", type=int, default=None, help="bootstrap draws per run")
    parser.add_argument("--chain-length", type=int, default=None, help="ABC draws per run")
    parser.add_argument("--xi", type=float, default=None, help="ABC tolerance")
    parser.add_argument("--md-weights", choices=["identity", "diag", "efficient", "synthetic"], default="efficient")
    parser.add_argument("--regime", choices=[r.value for r in Regime], default=Regime.FINITE.value)
    parser.add_argument("--n-synth", type=int, default=None)
    parser.add_argument("--level", type=float, default=0.95)
    parser.add_argument("--workers", type=int, default=None, help="concurrent runs (default: WORKERS)")
    add_simulation_options(parser)
    add_common_options(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    methods = check_methods([m.strip() for m in args.methods.split(",") if m.strip()])
    try:
        options = EstimatorOptions(
            bootstrap_draws=args.bootstrap,
            md_weights=args.md_weights,
            regime=args.regime,
            abc_chain_length=args.chain_length,
            xi=args.xi,
            n_synth=args.n_synth,
            level=args.level,
        )
    except ValueError as e:
        raise InputError(f"Invalid estimator options: {e}") from e

    if args.design == "crossval":
        if not args.aligned:
            raise InputError("the crossval design needs --aligned")
        report = crossval_experiment(
            ingest_aligned(args.aligned),
            args.runs,
            truth=args.truth,
            methods=methods,
            seed=args.seed,
            options=options,
            workers=args.workers,
        )
        rc = run_config(args, ["aligned"])
    else:
        report = lattice_experiment(
            sim_config(args),
            args.side,
            args.runs,
            methods=methods,
            seed=args.seed,
            options=options,
            spacing=args.spacing,
            workers=args.workers,
        )
        rc = run_config(args)

    notes = [f"{report.runs_attempted} runs attempted"]
    notes += [f"{row.method}: {row.failures} failed run(s) excluded" for row in report.rows if row.failures]
    emit_report(report, args.out, "experiment", rc, notes=notes)
    return 0
