from misreg.models.covariance import CovKind, CovParams, ErrorKind, ErrorModel, Phi, RegressionParams
from misreg.models.data import (
    AlignedDataset,
    FieldSample,
    MeanBasis,
    MeanEstimate,
    MisalignedDataset,
    SimConfig,
)
from misreg.models.geometry import LagMode, LagSpec, Location, PairBin
from misreg.models.results import (
    AbcChain,
    AbcConfig,
    BootstrapDraws,
    CrossFlavor,
    EmpiricalVariogram,
    EstimatorOptions,
    ExperimentReport,
    FitMethod,
    FitResult,
    KrigingPrediction,
    LocationDesign,
    MdResult,
    MethodRow,
    MomentKind,
    MomentVector,
    Regime,
    RegressionEstimate,
    RunConfig,
    SigmaG,
    VariogramEntry,
    WeightMatrix,
    WeightSource,
)

__all__ = [
    "AbcChain",
    "AbcConfig",
    "AlignedDataset",
    "BootstrapDraws",
    "CovKind",
    "CovParams",
    "CrossFlavor",
    "EmpiricalVariogram",
    "ErrorKind",
    "ErrorModel",
    "EstimatorOptions",
    "ExperimentReport",
    "FieldSample",
    "FitMethod",
    "FitResult",
    "KrigingPrediction",
    "LagMode",
    "LagSpec",
    "Location",
    "LocationDesign",
    "MdResult",
    "MeanBasis",
    "MeanEstimate",
    "MethodRow",
    "MisalignedDataset",
    "MomentKind",
    "MomentVector",
    "PairBin",
    "Phi",
    "Regime",
    "RegressionEstimate",
    "RegressionParams",
    "RunConfig",
    "SigmaG",
    "SimConfig",
    "VariogramEntry",
    "WeightMatrix",
    "WeightSource",
]
