import logging
import os
from typing import Literal

from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Toolkit settings with environment variable and key=value file support"""

    # Logging
    LOG_LEVEL: str = "INFO"
    SHOW_PROGRESS: bool = True

    # Covariance model
    COV_KIND: Literal["exponential", "gaussian", "matern"] = "exponential"
    MATERN_NU: float = 1.5
    NUGGET: float = 0.0
    JITTER_SCALE: float = 1e-8

    # Lag grid
    N_DEFAULT_LAGS: int = 8
    LAG_LOW_QUANTILE: float = 5.0
    LAG_HIGH_QUANTILE: float = 60.0
    MIN_PAIR_COUNT: int = 30

    # Optimizers
    OPTIMIZER_MAX_ITER: int = 500
    OPTIMIZER_TOL: float = 1e-8
    N_STARTS: int = 3
    HESSIAN_STEP: float = 1e-4
    JACOBIAN_STEP: float = 1e-5

    # Two-step bootstrap
    BOOTSTRAP_DRAWS: int = 200
    CI_LEVEL: float = 0.95
    CI_METHOD: Literal["percentile", "normal"] = "percentile"
    REDRAW_WARN_SHARE: float = 0.5

    # Minimum distance
    CROSS_FLAVOR: Literal["variogram", "covariance"] = "covariance"
    REGIME: Literal["pure", "mixed", "finite"] = "mixed"
    DENSITY_GRID: int = 10
    UNIFORM_DENSITY: bool = False
    QUAD_RADIAL_NODES: int = 64
    QUAD_ANGULAR_NODES: int = 32
    QUAD_RADIUS_FACTOR: float = 20.0
    QUAD_TAIL_TOL: float = 1e-6
    SIGMA_QUADRATURE: bool = False
    RIDGE_FACTOR: float = 1e-8
    N_SYNTH: int = 200

    # ABC sampler
    ABC_XI: float = 0.1
    ABC_CHAIN_LENGTH: int = 2000
    ABC_CHAINS: int = 1

    # Monte Carlo harness
    WORKERS: int = 4
    MAX_FAILURE_SHARE: float = 0.1

    # Reports
    FLOAT_DIGITS: int = 12

    model_config = SettingsConfigDict(
        env_file=".env" if os.getenv("MISREG_ENV") != "ci" else None,
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()


def load_settings(config_path: str | None = None) -> Settings:
    """Settings from the environment, optionally layered on a key=value file"""
    if config_path is None:
        return Settings()
    return Settings(_env_file=config_path)


def validate_settings(current: Settings) -> list[str]:
    """Log warnings for legal but unusual settings; returns the messages"""
    notes = []

    if current.BOOTSTRAP_DRAWS < 100:
        notes.append(f"BOOTSTRAP_DRAWS={current.BOOTSTRAP_DRAWS} is below the recommended 100")

    if current.MIN_PAIR_COUNT < 10:
        notes.append(f"MIN_PAIR_COUNT={current.MIN_PAIR_COUNT} admits very small lag bins")

    if current.ABC_XI == 0:
        notes.append("ABC_XI=0 accepts only proposals at least as good as the estimate")

    if current.COV_KIND == "matern" and current.MATERN_NU <= 0:
        notes.append(f"MATERN_NU={current.MATERN_NU} must be positive for the matern family")

    for note in notes:
        logger.warning(note)
    return notes


def apply_settings(loaded: Settings, **overrides) -> Settings:
    """Copy loaded values and explicit overrides onto the shared settings object in place"""
    values = loaded.model_dump()
    values.update({k: v for k, v in overrides.items() if v is not None})
    for key, value in values.items():
        setattr(settings, key, value)
    return settings
