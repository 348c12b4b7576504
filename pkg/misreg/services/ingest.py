"""CSV ingestion for station, outcome and aligned tables.

    stations.csv  id,x_km,y_km,value
    outcomes.csv  id,x_km,y_km,y,ctrl_1..ctrl_p[,group]
    aligned.csv   id,x_km,y_km,r,y,ctrl_1..ctrl_p

Header row required. Leading lines starting with '#' are skipped. Errors name
the file line of the offending row.
"""

import logging
import re
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from misreg.exceptions import InputError
from misreg.models.data import AlignedDataset, FieldSample, MisalignedDataset
from misreg.models.geometry import LagMode, LagSpec
from misreg.services.kriging import average_duplicates
from misreg.utils.helpers import validate_input_file

logger = logging.getLogger(__name__)

STATION_COLUMNS = ("id", "x_km", "y_km", "value")
OUTCOME_COLUMNS = ("id", "x_km", "y_km", "y")
ALIGNED_COLUMNS = ("id", "x_km", "y_km", "r", "y")
TARGET_COLUMNS = ("id", "x_km", "y_km")
LAG_COLUMNS = ("kind", "r", "r_tol")
CONTROL_PATTERN = re.compile(r"^ctrl_(\d+)$")


def _leading_comments(path: Path) -> int:
    count = 0
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            count += 1
    return count


def read_table(path: str | Path, required: tuple[str, ...]) -> tuple[pd.DataFrame, int]:
    """Raw string table and the file line number of its first data row"""
    path = validate_input_file(path)
    skip = _leading_comments(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skiprows=skip, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputError(f"{path.name}: cannot parse CSV: {e}") from e

    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise InputError(f"{path.name}: missing column(s) {', '.join(missing)}; expected {','.join(required)}")
    if frame.empty:
        raise InputError(f"{path.name}: no data rows")
    return frame, skip + 2


def _numeric(frame: pd.DataFrame, column: str, name: str, first_line: int) -> np.ndarray:
    raw = frame[column].str.strip()
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        raise InputError(
            f"{name}, line {row + first_line}: column '{column}' is not a finite number: '{raw.iloc[row]}'"
        )
    return values


def _controls(frame: pd.DataFrame, name: str, first_line: int) -> np.ndarray:
    matches = sorted(
        (int(m.group(1)), c) for c in frame.columns if (m := CONTROL_PATTERN.match(c)) is not None
    )
    if not matches:
        raise InputError(f"{name}: no control columns ctrl_1..ctrl_p")
    expected = list(range(1, len(matches) + 1))
    if [k for k, _ in matches] != expected:
        raise InputError(f"{name}: control columns must be numbered ctrl_1..ctrl_{len(matches)}")
    return np.column_stack([_numeric(frame, c, name, first_line) for _, c in matches])


def _coords(frame: pd.DataFrame, name: str, first_line: int) -> np.ndarray:
    return np.column_stack(
        [_numeric(frame, "x_km", name, first_line), _numeric(frame, "y_km", name, first_line)]
    )


def read_targets(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Prediction locations: id,x_km,y_km"""
    frame, first = read_table(path, TARGET_COLUMNS)
    return frame["id"].str.strip().tolist(), _coords(frame, Path(path).name, first)


def read_lags(path: str | Path) -> tuple[list[LagSpec], list[LagSpec]]:
    """Lag grid file: kind,r,r_tol[,angle,angle_tol] with kind self or cross; blank angles are isotropic"""
    frame, first = read_table(path, LAG_COLUMNS)
    name = Path(path).name
    r = _numeric(frame, "r", name, first)
    r_tol = _numeric(frame, "r_tol", name, first)
    has_angles = "angle" in frame.columns and "angle_tol" in frame.columns

    lags_self, lags_cross = [], []
    for row, kind in enumerate(frame["kind"].str.strip()):
        line = row + first
        spec = {"r": r[row], "r_tol": r_tol[row]}
        if has_angles and frame["angle"].iloc[row].strip():
            try:
                spec.update(
                    mode=LagMode.DIRECTIONAL,
                    angle=float(frame["angle"].iloc[row]),
                    angle_tol=float(frame["angle_tol"].iloc[row]),
                )
            except ValueError as e:
                raise InputError(f"{name}, line {line}: bad angle: {e}") from e
        try:
            lag = LagSpec(**spec)
        except ValueError as e:
            raise InputError(f"{name}, line {line}: invalid lag: {e}") from e

        if kind == "self":
            lags_self.append(lag)
        elif kind == "cross":
            lags_cross.append(lag)
        else:
            raise InputError(f"{name}, line {line}: kind must be self or cross, got '{kind}'")

    if not lags_self or not lags_cross:
        raise InputError(f"{name}: needs at least one self and one cross lag")
    return lags_self, lags_cross


def read_stations(path: str | Path) -> FieldSample:
    frame, first = read_table(path, STATION_COLUMNS)
    name = Path(path).name
    return FieldSample(coords=_coords(frame, name, first), values=_numeric(frame, "value", name, first))


def ingest(stations_path: str | Path, outcomes_path: str | Path) -> MisalignedDataset:
    """Misaligned dataset from the two CSV files; duplicate station rows are averaged"""
    stations, merged = average_duplicates(read_stations(stations_path))
    if merged:
        logger.info("%s: %d duplicate station location(s) averaged", Path(stations_path).name, merged)

    frame, first = read_table(outcomes_path, OUTCOME_COLUMNS)
    name = Path(outcomes_path).name
    group = None
    if "group" in frame.columns:
        group = frame["group"].str.strip().to_numpy()
        empty = np.flatnonzero(group == "")
        if empty.size:
            raise InputError(f"{name}, line {int(empty[0]) + first}: empty group label")

    coords, y, F = _coords(frame, name, first), _numeric(frame, "y", name, first), _controls(frame, name, first)
    try:
        data = MisalignedDataset(
            outcome_locs=coords,
            y=y,
            F=F,
            station_locs=stations.coords,
            r_star=stations.values,
            group=group,
        )
    except ValueError as e:
        raise InputError(f"Invalid dataset: {e}") from e

    log_summary(data)
    return data


def ingest_aligned(path: str | Path) -> AlignedDataset:
    frame, first = read_table(path, ALIGNED_COLUMNS)
    name = Path(path).name
    coords, r = _coords(frame, name, first), _numeric(frame, "r", name, first)
    y, F = _numeric(frame, "y", name, first), _controls(frame, name, first)
    try:
        return AlignedDataset(coords=coords, r=r, y=y, F=F)
    except ValueError as e:
        raise InputError(f"Invalid aligned dataset: {e}") from e


def summarize(data: MisalignedDataset) -> dict[str, float]:
    """Sizes and quantiles of the distance from each outcome to its closest station"""
    nearest, _ = cKDTree(data.station_locs).query(data.outcome_locs, k=1)
    q = np.quantile(nearest, [0.25, 0.5, 0.75])
    return {
        "N": data.n_outcomes,
        "M": data.n_stations,
        "nearest_q25_km": float(q[0]),
        "nearest_median_km": float(q[1]),
        "nearest_q75_km": float(q[2]),
    }


def log_summary(data: MisalignedDataset) -> dict[str, float]:
    summary = summarize(data)
    logger.info(
        "Loaded N=%d outcomes, M=%d stations; median distance to the closest station %.4g km (IQR %.4g-%.4g)",
        summary["N"],
        summary["M"],
        summary["nearest_median_km"],
        summary["nearest_q25_km"],
        summary["nearest_q75_km"],
    )
    return summary
