import math
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class LagMode(str, Enum):
    ISOTROPIC = "isotropic"
    DIRECTIONAL = "directional"


class Location(BaseModel):
    """Planar location in kilometers"""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float

    @field_validator("x", "y")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("coordinates must be finite")
        return v


class LagSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: LagMode = LagMode.ISOTROPIC
    r: float = Field(ge=0)
    r_tol: float = Field(gt=0)
    angle: Optional[float] = None
    angle_tol: Optional[float] = None

    @model_validator(mode="after")
    def _check_direction(self) -> "LagSpec":
        if self.mode == LagMode.DIRECTIONAL:
            if self.angle is None or self.angle_tol is None:
                raise ValueError("directional lags need angle and angle_tol")
            if not 0 <= self.angle < math.pi:
                raise ValueError("directional angle must lie in [0, pi)")
            if self.angle_tol <= 0:
                raise ValueError("angle_tol must be positive")
        return self

    @property
    def label(self) -> str:
        if self.mode == LagMode.DIRECTIONAL:
            return f"r={self.r:.6g}@{self.angle:.4f}"
        return f"r={self.r:.6g}"


class PairBin(BaseModel):
    """Pairs (i into the first set, j into the second) falling in one lag bin"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    lag: LagSpec
    pairs: np.ndarray
    mean_distance: float

    @field_validator("pairs", mode="before")
    @classmethod
    def _as_index_array(cls, v) -> np.ndarray:
        arr = np.asarray(v, dtype=np.intp).reshape(-1, 2)
        arr.setflags(write=False)
        return arr

    @property
    def count(self) -> int:
        return int(self.pairs.shape[0])
