import logging
from pathlib import Path

import numpy as np

from misreg.exceptions import InputError

logger = logging.getLogger(__name__)

ALLOWED_EXTENSIONS = {".csv", ".txt"}


def derive_seed(seed: int, index: int | None = None) -> np.random.SeedSequence:
    """Seed sequence for a master seed, split by replication index when given"""
    if seed < 0:
        raise InputError(f"Seed must be nonnegative, got {seed}")
    if index is None:
        return np.random.SeedSequence(seed)
    return np.random.SeedSequence(seed, spawn_key=(int(index),))


def derive_rng(seed: int, index: int | None = None) -> np.random.Generator:
    """Independent, reproducible generator for (seed, index)"""
    return np.random.default_rng(derive_seed(seed, index))


def validate_input_file(path: str | Path) -> Path:
    """Check that an input table exists and has a supported extension"""
    file_path = Path(path)

    if not file_path.exists():
        raise InputError(f"File not found: {file_path}")

    if not file_path.is_file():
        raise InputError(f"Not a regular file: {file_path}")

    if file_path.suffix.lower() not in ALLOWED_EXTENSIONS:
        raise InputError(
            f"File type not supported: {file_path.name}. Allowed: {', '.join(sorted(ALLOWED_EXTENSIONS))}"
        )

    return file_path


def ensure_output_dir(path: str | Path) -> Path:
    """Create the output directory if needed and make sure it is writable"""
    out_dir = Path(path)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise InputError(f"Cannot create output directory {out_dir}: {e}") from e

    if not out_dir.is_dir():
        raise InputError(f"Output path is not a directory: {out_dir}")
    return out_dir


def format_duration(seconds: float) -> str:
    """Format duration in seconds to human readable format"""
    if seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        return f"{seconds / 60:.1f}m"
    return f"{seconds / 3600:.1f}h"


def quantile_interval(draws: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Equal-tailed percentile interval of draws along axis 0"""
    if not 0 < level < 1:
        raise InputError(f"Confidence level must be in (0, 1), got {level}")
    alpha = 1.0 - level
    lo = np.quantile(draws, alpha / 2, axis=0)
    hi = np.quantile(draws, 1 - alpha / 2, axis=0)
    return lo, hi
