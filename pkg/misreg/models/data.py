from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from misreg.models.covariance import CovParams, ErrorModel, RegressionParams


def _frozen_array(v, ndim: int) -> np.ndarray:
    arr = np.array(v, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 2)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("array contains non-finite values")
    arr.setflags(write=False)
    return arr


def _coords(v) -> np.ndarray:
    arr = _frozen_array(v, 2)
    if arr.shape[1] != 2:
        raise ValueError(f"coordinates must have two columns, got shape {arr.shape}")
    return arr


class MeanBasis(str, Enum):
    CONSTANT = "constant"
    LINEAR = "linear"

    def design(self, coords: np.ndarray) -> np.ndarray:
        """Basis matrix s(x) evaluated row-wise"""
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        ones = np.ones((coords.shape[0], 1))
        if self is MeanBasis.CONSTANT:
            return ones
        return np.hstack([ones, coords])

    @property
    def dim(self) -> int:
        return 1 if self is MeanBasis.CONSTANT else 3


class MeanEstimate(BaseModel):
    """Mean function s(x)ᵀρ; a constant m is the one-coefficient constant basis"""

    model_config = ConfigDict(frozen=True)

    basis: MeanBasis = MeanBasis.CONSTANT
    coefficients: list[float]

    @model_validator(mode="after")
    def _check_dim(self) -> "MeanEstimate":
        if len(self.coefficients) != self.basis.dim:
            raise ValueError(f"{self.basis.value} basis takes {self.basis.dim} coefficients")
        return self

    @classmethod
    def constant(cls, m: float) -> "MeanEstimate":
        return cls(basis=MeanBasis.CONSTANT, coefficients=[float(m)])

    @classmethod
    def coerce(cls, value: "MeanEstimate | float") -> "MeanEstimate":
        if isinstance(value, MeanEstimate):
            return value
        return cls.constant(float(value))

    def evaluate(self, coords: np.ndarray) -> np.ndarray:
        return self.basis.design(coords) @ np.asarray(self.coefficients)


class FieldSample(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coords: np.ndarray
    values: np.ndarray

    @field_validator("coords", mode="before")
    @classmethod
    def check_coords(cls, v) -> np.ndarray:
        return _coords(v)

    @field_validator("values", mode="before")
    @classmethod
    def check_values(cls, v) -> np.ndarray:
        return _frozen_array(v, 1)

    @model_validator(mode="after")
    def _same_length(self) -> "FieldSample":
        if self.coords.shape[0] != self.values.shape[0]:
            raise ValueError("locations and values differ in length")
        return self

    def __len__(self) -> int:
        return int(self.values.shape[0])


class SimConfig(BaseModel):
    """Generative model for fields and misaligned regression datasets"""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(default=0, ge=0, lt=2**64)
    mean: MeanEstimate = MeanEstimate(coefficients=[0.0])
    theta: CovParams
    reg: RegressionParams = RegressionParams(beta=[1.0], gamma=[0.0])
    error_model: ErrorModel = ErrorModel()


class MisalignedDataset(BaseModel):
    """Outcomes (Y, F) at outcome locations, regressor R* at station locations"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    outcome_locs: np.ndarray
    y: np.ndarray
    F: np.ndarray
    station_locs: np.ndarray
    r_star: np.ndarray
    group: Optional[np.ndarray] = None

    @field_validator("outcome_locs", "station_locs", mode="before")
    @classmethod
    def check_locations(cls, v) -> np.ndarray:
        return _coords(v)

    @field_validator("y", "r_star", mode="before")
    @classmethod
    def check_vectors(cls, v) -> np.ndarray:
        return _frozen_array(v, 1)

    @field_validator("F", mode="before")
    @classmethod
    def check_controls(cls, v) -> np.ndarray:
        return _frozen_array(v, 2)

    @field_validator("group", mode="before")
    @classmethod
    def _check_group(cls, v):
        if v is None:
            return None
        arr = np.asarray(v).astype(str)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_shapes(self) -> "MisalignedDataset":
        n = self.outcome_locs.shape[0]
        m = self.station_locs.shape[0]
        if n == 0 or m == 0:
            raise ValueError("dataset needs at least one outcome and one station")
        if self.y.shape[0] != n or self.F.shape[0] != n:
            raise ValueError("outcome locations, Y and F rows must agree")
        if self.r_star.shape[0] != m:
            raise ValueError("station locations and R* must agree")
        if self.group is not None and self.group.shape[0] != n:
            raise ValueError("group labels must have one entry per outcome")
        if np.linalg.matrix_rank(self.F) < self.F.shape[1]:
            raise ValueError("control matrix F is not of full column rank")
        return self

    @property
    def n_outcomes(self) -> int:
        return int(self.outcome_locs.shape[0])

    @property
    def n_stations(self) -> int:
        return int(self.station_locs.shape[0])

    @property
    def stations(self) -> FieldSample:
        return FieldSample(coords=self.station_locs, values=self.r_star)

    @property
    def group_labels(self) -> list[str]:
        return [] if self.group is None else sorted(set(self.group.tolist()))


class AlignedDataset(BaseModel):
    """Regressor and outcome observed at the same locations"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    coords: np.ndarray
    r: np.ndarray
    y: np.ndarray
    F: np.ndarray

    @field_validator("coords", mode="before")
    @classmethod
    def check_coords(cls, v) -> np.ndarray:
        return _coords(v)

    @field_validator("r", "y", mode="before")
    @classmethod
    def check_vectors(cls, v) -> np.ndarray:
        return _frozen_array(v, 1)

    @field_validator("F", mode="before")
    @classmethod
    def check_controls(cls, v) -> np.ndarray:
        return _frozen_array(v, 2)

    @model_validator(mode="after")
    def _check_shapes(self) -> "AlignedDataset":
        n = self.coords.shape[0]
        if n < 4:
            raise ValueError("aligned dataset needs at least four locations")
        if self.r.shape[0] != n or self.y.shape[0] != n or self.F.shape[0] != n:
            raise ValueError("aligned columns differ in length")
        return self

    def split(self, station_idx: np.ndarray, outcome_idx: np.ndarray) -> MisalignedDataset:
        """Hide Y at station_idx and R at outcome_idx"""
        return MisalignedDataset(
            outcome_locs=self.coords[outcome_idx],
            y=self.y[outcome_idx],
            F=self.F[outcome_idx],
            station_locs=self.coords[station_idx],
            r_star=self.r[station_idx],
        )
