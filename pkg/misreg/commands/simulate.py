"""simulate: write a synthetic misaligned (or aligned) dataset in the ingestion schemas."""

import argparse
import logging

import numpy as np
import pandas as pd

from misreg.commands.common import add_common_options, add_simulation_options, run_config, sim_config
from misreg.exceptions import InputError
from misreg.services.fieldsim import simulate_aligned, simulate_misaligned
from misreg.services.geometry import make_lattice
from misreg.services.harness import checkerboard_split
from misreg.services.ingest import summarize
from misreg.services.reporting import aligned_frame, dataset_frames, emit_report, write_csv
from misreg.utils.helpers import derive_rng, ensure_output_dir

logger = logging.getLogger(__name__)

NAME = "simulate"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="simulate a dataset from the generative model")
    add_simulation_options(parser)
    parser.add_argument("--layout", choices=["lattice", "random"], default="lattice")
    parser.add_argument("--side", type=int, default=15, help="lattice side; checkerboard split (default: 15)")
    parser.add_argument("--spacing", type=float, default=1.0, help="lattice spacing in km (default: 1)")
    parser.add_argument("--n-stations", type=int, default=100, help="random layout: station count")
    parser.add_argument("--n-outcomes", type=int, default=100, help="random layout: outcome count")
    parser.add_argument("--extent", type=float, default=10.0, help="random layout: square side in km")
    parser.add_argument("--aligned", action="store_true", help="write aligned.csv (R and Y everywhere) instead")
    add_common_options(parser)
    parser.set_defaults(func=run)


def _random_locations(n: int, extent: float, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise InputError(f"Location count must be positive, got {n}")
    return rng.uniform(0.0, extent, size=(n, 2))


def run(args: argparse.Namespace) -> int:
    cfg = sim_config(args)
    rc = run_config(args)
    out = ensure_output_dir(args.out)
    # one stream for the layout, the model stream comes from the seed itself
    layout_rng = derive_rng(args.seed, 1)

    if args.aligned:
        if args.layout == "lattice":
            locs = make_lattice(args.side, args.spacing)
        else:
            locs = _random_locations(args.n_stations + args.n_outcomes, args.extent, layout_rng)
        aligned = simulate_aligned(cfg, locs)
        write_csv(aligned_frame(aligned), out / "aligned.csv", rc)
        summary = pd.DataFrame({"key": ["n"], "value": [str(aligned.coords.shape[0])]})
        emit_report(summary, out, "simulate", rc)
        return 0

    if args.layout == "lattice":
        stations, outcomes = checkerboard_split(args.side, args.spacing)
    else:
        stations = _random_locations(args.n_stations, args.extent, layout_rng)
        outcomes = _random_locations(args.n_outcomes, args.extent, layout_rng)

    data, r_out = simulate_misaligned(cfg, outcomes, stations)
    for name, frame in dataset_frames(data, r_out).items():
        write_csv(frame, out / f"{name}.csv", rc)

    summary = summarize(data)
    emit_report(
        pd.DataFrame({"key": list(summary), "value": [str(v) for v in summary.values()]}),
        out,
        "simulate",
        rc,
    )
    return 0
