from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from misreg.models.covariance import CovParams, Phi
from misreg.models.data import MeanEstimate
from misreg.models.geometry import LagSpec


def _readonly(v, ndim: int | None = None) -> np.ndarray:
    arr = np.array(v, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class FitMethod(str, Enum):
    ML = "ml"
    REML = "reml"


class FitResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    theta_hat: CovParams
    mean_hat: MeanEstimate
    vcov_theta: np.ndarray
    vcov_mean: np.ndarray
    vcov_joint: Optional[np.ndarray] = None
    loglik: float
    method: FitMethod
    converged: bool
    iterations: int = 0
    gradient_norm: float = 0.0
    vcov_degenerate: bool = False
    n_stations: int = 0

    @field_validator("vcov_theta", "vcov_mean", mode="before")
    @classmethod
    def _square(cls, v) -> np.ndarray:
        arr = _readonly(v, 2)
        if arr.shape[0] != arr.shape[1]:
            raise ValueError("covariance matrices must be square")
        return arr

    @field_validator("vcov_joint", mode="before")
    @classmethod
    def _joint(cls, v):
        return None if v is None else _readonly(v, 2)

    @property
    def se_theta(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov_theta), 0.0, None))


class KrigingPrediction(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coords: np.ndarray
    values: np.ndarray
    kriging_variances: Optional[np.ndarray] = None

    @field_validator("coords", mode="before")
    @classmethod
    def _coords(cls, v) -> np.ndarray:
        return _readonly(v, 2)

    @field_validator("values", mode="before")
    @classmethod
    def _values(cls, v) -> np.ndarray:
        return _readonly(v, 1)

    @field_validator("kriging_variances", mode="before")
    @classmethod
    def _variances(cls, v):
        if v is None:
            return None
        arr = np.clip(np.array(v, dtype=float), 0.0, None)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _lengths(self) -> "KrigingPrediction":
        if self.coords.shape[0] != self.values.shape[0]:
            raise ValueError("prediction locations and values differ in length")
        if self.kriging_variances is not None and self.kriging_variances.shape != self.values.shape:
            raise ValueError("kriging variances must match predictions")
        return self


class RegressionEstimate(BaseModel):
    """Uniform estimator output: coefficients, standard errors and intervals"""

    model_config = ConfigDict(frozen=True)

    method: str
    names: list[str]
    beta_hat: list[float]
    gamma_hat: list[float] = Field(default_factory=list)
    se: list[float]
    ci_low: list[float]
    ci_high: list[float]
    level: float = Field(gt=0, lt=1)
    diagnostics: dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _lengths(self) -> "RegressionEstimate":
        k = len(self.names)
        if len(self.beta_hat) + len(self.gamma_hat) != k:
            raise ValueError("names must label every coefficient")
        if not (len(self.se) == len(self.ci_low) == len(self.ci_high) == k):
            raise ValueError("standard errors and intervals must cover every coefficient")
        return self

    @property
    def coefficients(self) -> list[float]:
        return self.beta_hat + self.gamma_hat

    def covers(self, truth: float, index: int = 0) -> bool:
        return self.ci_low[index] <= truth <= self.ci_high[index]


class BootstrapDraws(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    betas: np.ndarray
    thetas: np.ndarray
    gammas: Optional[np.ndarray] = None
    rhos: Optional[np.ndarray] = None

    @field_validator("betas", "thetas", mode="before")
    @classmethod
    def _matrix(cls, v) -> np.ndarray:
        return _readonly(v, 2)

    @field_validator("gammas", "rhos", mode="before")
    @classmethod
    def _optional_matrix(cls, v):
        return None if v is None else _readonly(v, 2)

    @model_validator(mode="after")
    def _rows(self) -> "BootstrapDraws":
        if self.betas.shape[0] < 1 or self.betas.shape[0] != self.thetas.shape[0]:
            raise ValueError("beta and theta draws must have the same positive row count")
        return self

    @property
    def J(self) -> int:
        return int(self.betas.shape[0])


class MomentKind(str, Enum):
    SELF = "self"
    CROSS = "cross"


class CrossFlavor(str, Enum):
    VARIOGRAM = "variogram"
    COVARIANCE = "covariance"


class VariogramEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    lag: LagSpec
    estimate: float
    count: int = Field(ge=1)
    mean_distance: float = Field(ge=0)


class EmpiricalVariogram(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: list[VariogramEntry]
    flavor: str = "self"

    @property
    def estimates(self) -> np.ndarray:
        return np.array([e.estimate for e in self.entries])

    @property
    def counts(self) -> np.ndarray:
        return np.array([e.count for e in self.entries], dtype=int)

    @property
    def distances(self) -> np.ndarray:
        return np.array([e.mean_distance for e in self.entries])


class MomentVector(BaseModel):
    """g_n evaluated at one φ, with the bin bookkeeping of every entry"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    entries: np.ndarray
    lags: list[LagSpec]
    kinds: list[MomentKind]
    counts: np.ndarray
    flavor: CrossFlavor

    @model_validator(mode="after")
    def _lengths(self) -> "MomentVector":
        k = self.entries.shape[0]
        if not (len(self.lags) == len(self.kinds) == self.counts.shape[0] == k):
            raise ValueError("moment entries and bookkeeping differ in length")
        return self


class WeightSource(str, Enum):
    IDENTITY = "identity"
    DIAGONAL = "diagonal"
    EFFICIENT_PLUGIN = "efficient-plugin"
    SYNTHETIC_EMPIRICAL = "synthetic-empirical"


class WeightMatrix(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: np.ndarray
    source: WeightSource

    @field_validator("matrix", mode="before")
    @classmethod
    def _positive_definite(cls, v) -> np.ndarray:
        arr = np.atleast_2d(np.array(v, dtype=float))
        if arr.shape[0] != arr.shape[1]:
            raise ValueError("weight matrix must be square")
        if not np.allclose(arr, arr.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(arr).max())):
            raise ValueError("weight matrix must be symmetric")
        arr = 0.5 * (arr + arr.T)
        if np.linalg.eigvalsh(arr).min() <= 0:
            raise ValueError("weight matrix must be positive definite")
        arr.setflags(write=False)
        return arr

    @classmethod
    def identity(cls, k: int) -> "WeightMatrix":
        return cls(matrix=np.eye(k), source=WeightSource.IDENTITY)


class Regime(str, Enum):
    PURE = "pure"
    MIXED = "mixed"
    FINITE = "finite"


class LocationDesign(BaseModel):
    """Sampling-design summary for the large-sample regimes.

    The region is the bounding box padded by half the median nearest-neighbour
    spacing on every side. Q = ∫f² over the unit-area normalized region,
    λ_n² = region area and C1 = n / λ_n² (points per unit area). density holds
    the histogram cell probabilities when f is not taken as uniform.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int = Field(ge=1)
    area: float = Field(gt=0)
    Q: float = Field(gt=0)
    width: Optional[float] = Field(default=None, gt=0)
    height: Optional[float] = Field(default=None, gt=0)
    density: Optional[np.ndarray] = None

    @field_validator("density", mode="before")
    @classmethod
    def _density(cls, v):
        return None if v is None else _readonly(v, 2)

    @property
    def lambda_n(self) -> float:
        return float(np.sqrt(self.area))

    @property
    def C1(self) -> float:
        return self.n / self.area


class SigmaG(BaseModel):
    """Covariance of the moment vector; Var(g_n) ≈ matrix / rate²"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: np.ndarray
    regime: Regime
    rate: float = Field(gt=0)
    tail_bound: float = 0.0


class MdResult(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    phi_hat: Phi
    objective_at_min: float = Field(ge=0)
    converged: bool
    regime: Regime
    weight_source: WeightSource
    n_moments: int
    sigma_g_hat: Optional[np.ndarray] = None
    vcov_phi: Optional[np.ndarray] = None
    starts_agree: bool = True
    diagnostics: dict[str, Any] = Field(default_factory=dict)

    @property
    def se(self) -> Optional[np.ndarray]:
        if self.vcov_phi is None:
            return None
        return np.sqrt(np.clip(np.diag(self.vcov_phi), 0.0, None))


class AbcConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    xi: float = Field(default=0.1, ge=0)
    J: int = Field(default=2000, ge=1)
    proposal_mean: np.ndarray
    proposal_cov: np.ndarray
    seed: int = Field(default=0, ge=0)

    @field_validator("proposal_mean", mode="before")
    @classmethod
    def _mean(cls, v) -> np.ndarray:
        return _readonly(v, 1)

    @field_validator("proposal_cov", mode="before")
    @classmethod
    def _cov(cls, v) -> np.ndarray:
        arr = _readonly(np.atleast_2d(v), 2)
        if np.linalg.eigvalsh(0.5 * (arr + arr.T)).min() < -1e-12:
            raise ValueError("proposal covariance must be positive semidefinite")
        return arr


class AbcChain(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    draws: np.ndarray
    accepted: np.ndarray
    objectives: np.ndarray
    l_hat: float
    proposals: int

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))


class MethodRow(BaseModel):
    """One estimator/inference row of a Monte Carlo comparison table"""

    model_config = ConfigDict(frozen=True)

    method: str
    inference: str
    mean_beta: float
    rmse: float
    sd: float
    mean_se: float
    rmse_se: float
    coverage: float = Field(ge=0, le=1)
    coverage_se: float
    runs: int
    failures: int


class ExperimentReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    design: str
    truth: float
    runs_attempted: int
    rows: list[MethodRow]


class RunConfig(BaseModel):
    """Everything needed to reproduce a command invocation"""

    model_config = ConfigDict(frozen=True)

    subcommand: str
    inputs: dict[str, str] = Field(default_factory=dict)
    options: dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(default=0, ge=0)
    output_dir: str = "."


class EstimatorOptions(BaseModel):
    """Per-method knobs shared by the command line and the Monte Carlo harness"""

    model_config = ConfigDict(frozen=True)

    fit_method: FitMethod = FitMethod.ML
    bootstrap_draws: Optional[int] = Field(default=None, ge=1)
    md_weights: str = "efficient"
    regime: Regime = Regime.FINITE
    p_angles: int = Field(default=1, ge=1)
    abc_weights: str = "synthetic"
    abc_chain_length: Optional[int] = Field(default=None, ge=1)
    xi: Optional[float] = Field(default=None, ge=0)
    n_synth: Optional[int] = Field(default=None, ge=2)
    level: float = Field(default=0.95, gt=0, lt=1)
