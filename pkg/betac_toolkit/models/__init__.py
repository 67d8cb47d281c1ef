"""
Data models for the beta_c toolkit.
"""
from .common import StageResult
from .mesh import Mesh, FaceTag
from .flow import (
    BoundaryConditions,
    ConvectionScheme,
    CorrectionField,
    FlowState,
    SolverSettings,
    TurbulenceConstants,
    TurbulenceModel,
)
from .inversion import (
    AdjointCheck,
    AssimilationData,
    InversionProblem,
    InversionResult,
    OptimizerSettings,
    TerminationReason,
)
from .features import BandFilterRecord, TrainingSet, TrainingSource, FEATURE_NAMES, N_FEATURES
from .ensemble import DeepEnsembleOptions, EnsemblePrediction, ErrorUncertaintyBins, GpeSubmodel, GpeTrainingOptions
from .novelty import LofModel
from .manifest import ManifestEntry, RunManifest

__all__ = [
    "StageResult",
    "Mesh",
    "FaceTag",
    "BoundaryConditions",
    "ConvectionScheme",
    "CorrectionField",
    "FlowState",
    "SolverSettings",
    "TurbulenceConstants",
    "TurbulenceModel",
    "AdjointCheck",
    "AssimilationData",
    "InversionProblem",
    "InversionResult",
    "OptimizerSettings",
    "TerminationReason",
    "BandFilterRecord",
    "TrainingSet",
    "TrainingSource",
    "FEATURE_NAMES",
    "N_FEATURES",
    "DeepEnsembleOptions",
    "EnsemblePrediction",
    "ErrorUncertaintyBins",
    "GpeSubmodel",
    "GpeTrainingOptions",
    "LofModel",
    "ManifestEntry",
    "RunManifest",
]
