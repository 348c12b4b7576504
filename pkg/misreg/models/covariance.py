from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class CovKind(str, Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"
    MATERN = "matern"


class CovParams(BaseModel):
    """Isotropic covariance: family, sill θ1, range θ2, Matérn ν and nugget τ²"""

    model_config = ConfigDict(frozen=True)

    kind: CovKind = CovKind.EXPONENTIAL
    sill: float = Field(gt=0)
    range_km: float = Field(gt=0)
    nu: Optional[float] = None
    nugget: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _check_smoothness(self) -> "CovParams":
        if self.kind == CovKind.MATERN and (self.nu is None or self.nu <= 0):
            raise ValueError("matern covariance needs a positive smoothness nu")
        return self

    def to_vector(self) -> np.ndarray:
        return np.array([self.sill, self.range_km], dtype=float)

    def with_vector(self, theta: np.ndarray) -> "CovParams":
        return CovParams(
            kind=self.kind,
            sill=float(theta[0]),
            range_km=float(theta[1]),
            nu=self.nu,
            nugget=self.nugget,
        )

    @property
    def total_variance(self) -> float:
        return self.sill + self.nugget


class ErrorKind(str, Enum):
    IID = "iid"
    SPATIAL = "spatial"


class ErrorModel(BaseModel):
    """Regression error law: iid N(0, σ²) or a spatial covariance"""

    model_config = ConfigDict(frozen=True)

    kind: ErrorKind = ErrorKind.IID
    sigma2: float = Field(default=0.0, ge=0)
    cov: Optional[CovParams] = None

    @model_validator(mode="after")
    def _check_cov(self) -> "ErrorModel":
        if self.kind == ErrorKind.SPATIAL and self.cov is None:
            raise ValueError("spatial error model needs covariance parameters")
        return self


class RegressionParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta: list[float] = Field(min_length=1)
    gamma: list[float] = Field(min_length=1)
    sigma_model: Optional[ErrorModel] = None


class Phi(BaseModel):
    """Joint parameter (β, θ) of the minimum-distance problem"""

    model_config = ConfigDict(frozen=True)

    beta: float
    theta: CovParams

    def to_vector(self) -> np.ndarray:
        return np.array([self.beta, self.theta.sill, self.theta.range_km], dtype=float)

    def with_vector(self, phi: np.ndarray) -> "Phi":
        return Phi(beta=float(phi[0]), theta=self.theta.with_vector(phi[1:3]))
