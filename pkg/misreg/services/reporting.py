"""CSV and text reports.

Every report pair embeds the RunConfig that produced it and carries no
timestamps, so the same inputs and configuration give byte-identical files.
"""

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader

from misreg.config import settings
from misreg.exceptions import InputError
from misreg.models.data import AlignedDataset, MisalignedDataset
from misreg.models.results import (
    BootstrapDraws,
    ExperimentReport,
    FitResult,
    KrigingPrediction,
    MdResult,
    MomentVector,
    RegressionEstimate,
    RunConfig,
)
from misreg.utils.helpers import ensure_output_dir

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).resolve().parent.parent / "templates"
TEXT_TABLE_ROWS = 50
EXPERIMENT_COLUMNS = [
    "method",
    "inference",
    "mean_beta",
    "rmse",
    "sd",
    "mean_se",
    "rmse_se",
    "coverage",
    "coverage_se",
    "runs",
    "failures",
]

templates = Environment(
    loader=FileSystemLoader(TEMPLATES_DIR),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
    autoescape=False,
)


def float_format() -> str:
    return f"%.{settings.FLOAT_DIGITS}g"


def estimate_frame(estimates: Sequence[RegressionEstimate]) -> pd.DataFrame:
    rows = []
    for est in estimates:
        for k, name in enumerate(est.names):
            rows.append(
                {
                    "method": est.method,
                    "coefficient": name,
                    "estimate": est.coefficients[k],
                    "se": est.se[k],
                    "ci_low": est.ci_low[k],
                    "ci_high": est.ci_high[k],
                    "level": est.level,
                    "inference": est.diagnostics.get("inference", ""),
                }
            )
    return pd.DataFrame(rows)


def fit_frame(fit: FitResult) -> pd.DataFrame:
    """Flat key,value listing of a covariance fit"""
    fmt = float_format()
    rho_se = np.sqrt(np.clip(np.diag(fit.vcov_mean), 0.0, None))
    pairs = [
        ("kind", fit.theta_hat.kind.value),
        ("method", fit.method.value),
        ("basis", fit.mean_hat.basis.value),
        ("sill", fit.theta_hat.sill),
        ("range_km", fit.theta_hat.range_km),
        ("se_sill", fit.se_theta[0]),
        ("se_range_km", fit.se_theta[1]),
    ]
    for k, (coef, se) in enumerate(zip(fit.mean_hat.coefficients, rho_se)):
        pairs += [(f"rho_{k}", coef), (f"se_rho_{k}", se)]
    pairs += [
        ("loglik", fit.loglik),
        ("converged", fit.converged),
        ("iterations", fit.iterations),
        ("gradient_norm", fit.gradient_norm),
        ("vcov_degenerate", fit.vcov_degenerate),
        ("n_stations", fit.n_stations),
    ]
    return pd.DataFrame(
        {
            "key": [k for k, _ in pairs],
            "value": [fmt % v if isinstance(v, float) else str(v) for _, v in pairs],
        }
    )


def md_frame(result: MdResult) -> pd.DataFrame:
    se = result.se if result.se is not None else np.full(3, np.nan)
    return pd.DataFrame(
        {
            "parameter": ["beta", "sill", "range_km"],
            "estimate": result.phi_hat.to_vector(),
            "se": se,
        }
    )


def prediction_frame(pred: KrigingPrediction, ids: Sequence[str] | None = None) -> pd.DataFrame:
    """Columns that re-ingest as a stations table"""
    if ids is None:
        ids = [f"p{k + 1}" for k in range(pred.values.shape[0])]
    frame = pd.DataFrame(
        {
            "id": list(ids),
            "x_km": pred.coords[:, 0],
            "y_km": pred.coords[:, 1],
            "value": pred.values,
        }
    )
    if pred.kriging_variances is not None:
        frame["kvar"] = pred.kriging_variances
    return frame


def bootstrap_frame(draws: BootstrapDraws, names: Sequence[str]) -> pd.DataFrame:
    """One row per bootstrap draw: slopes and covariance parameters"""
    frame = pd.DataFrame(draws.betas, columns=list(names[: draws.betas.shape[1]]))
    frame["sill"] = draws.thetas[:, 0]
    frame["range_km"] = draws.thetas[:, 1]
    return frame


def moment_frame(moments: MomentVector, empirical: np.ndarray) -> pd.DataFrame:
    """Moment entries at the estimate: bin, pair count, empirical value and residual g"""
    return pd.DataFrame(
        {
            "kind": [k.value for k in moments.kinds],
            "lag_r": [lag.r for lag in moments.lags],
            "lag_angle": [lag.angle if lag.angle is not None else np.nan for lag in moments.lags],
            "count": moments.counts,
            "empirical": empirical,
            "residual": moments.entries,
        }
    )


def experiment_frame(report: ExperimentReport) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in report.rows], columns=EXPERIMENT_COLUMNS)


def dataset_frames(data: MisalignedDataset, r_out: np.ndarray | None = None) -> dict[str, pd.DataFrame]:
    """stations, outcomes and (when given) latent tables in the ingestion schemas"""
    stations = pd.DataFrame(
        {
            "id": [f"s{k + 1}" for k in range(data.n_stations)],
            "x_km": data.station_locs[:, 0],
            "y_km": data.station_locs[:, 1],
            "value": data.r_star,
        }
    )
    outcomes = pd.DataFrame(
        {
            "id": [f"o{k + 1}" for k in range(data.n_outcomes)],
            "x_km": data.outcome_locs[:, 0],
            "y_km": data.outcome_locs[:, 1],
            "y": data.y,
        }
    )
    for k in range(data.F.shape[1]):
        outcomes[f"ctrl_{k + 1}"] = data.F[:, k]
    if data.group is not None:
        outcomes["group"] = data.group

    frames = {"stations": stations, "outcomes": outcomes}
    if r_out is not None:
        frames["latent"] = pd.DataFrame(
            {"id": outcomes["id"], "x_km": outcomes["x_km"], "y_km": outcomes["y_km"], "r": r_out}
        )
    return frames


def aligned_frame(aligned: AlignedDataset) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "id": [f"a{k + 1}" for k in range(aligned.coords.shape[0])],
            "x_km": aligned.coords[:, 0],
            "y_km": aligned.coords[:, 1],
            "r": aligned.r,
            "y": aligned.y,
        }
    )
    for k in range(aligned.F.shape[1]):
        frame[f"ctrl_{k + 1}"] = aligned.F[:, k]
    return frame


def _as_frame(content) -> tuple[pd.DataFrame, str]:
    if isinstance(content, pd.DataFrame):
        return content, "Table"
    if isinstance(content, ExperimentReport):
        if not content.rows:
            raise InputError("experiment report has no method rows")
        return experiment_frame(content), f"Experiment: {content.design}, truth {content.truth:.6g}"
    if isinstance(content, MdResult):
        return md_frame(content), "Minimum-distance estimate"
    if isinstance(content, FitResult):
        return fit_frame(content), f"Covariance fit ({content.method.value})"
    if isinstance(content, KrigingPrediction):
        return prediction_frame(content), "Predictions"
    if isinstance(content, RegressionEstimate):
        content = [content]
    content = list(content)
    if not content:
        raise InputError("no estimates to report")
    return estimate_frame(content), "Estimates"


def render_text(
    title: str,
    sections: list[tuple[str, pd.DataFrame]],
    run_config: RunConfig,
    notes: Sequence[str] = (),
) -> str:
    fmt = float_format()
    template = templates.get_template("report.txt.j2")
    return template.render(
        title=title,
        run_config=run_config,
        config_json=run_config.model_dump_json(indent=2),
        sections=[
            {"heading": heading, "body": frame.to_string(index=False, float_format=lambda v: fmt % v)}
            for heading, frame in sections
        ],
        notes=list(notes),
    )


def write_csv(frame: pd.DataFrame, path: Path, run_config: RunConfig | None = None) -> Path:
    with path.open("w", encoding="utf-8", newline="") as handle:
        if run_config is not None:
            handle.write(f"# run_config: {run_config.model_dump_json()}\n")
        frame.to_csv(handle, index=False, float_format=float_format(), lineterminator="\n")
    return path


def emit_report(
    content,
    out_dir: str | Path,
    name: str,
    run_config: RunConfig,
    extra: dict[str, pd.DataFrame] | None = None,
    notes: Sequence[str] = (),
) -> list[Path]:
    """<name>.csv and <name>.txt, plus one CSV per extra table.

    Content is validated and rendered before anything is written.
    """
    frame, heading = _as_frame(content)
    extra = extra or {}
    text = render_text(
        f"misreg {run_config.subcommand}",
        [(heading, frame)] + [(key, table) for key, table in extra.items() if len(table) <= TEXT_TABLE_ROWS],
        run_config,
        notes,
    )

    out = ensure_output_dir(out_dir)
    written = [write_csv(frame, out / f"{name}.csv", run_config)]
    for key, table in extra.items():
        written.append(write_csv(table, out / f"{name}_{key}.csv", run_config))
    txt_path = out / f"{name}.txt"
    txt_path.write_text(text, encoding="utf-8")
    written.append(txt_path)

    logger.info("Wrote %s", ", ".join(p.name for p in written))
    return written
