"""
beta_c toolkit for Python.

Field inversion of a production correction in a k-omega turbulence model,
local flow features, and uncertainty-gated ensemble prediction of the correction.
"""
from .config import RunConfig, CaseConfig
from .errors import (
    BetacError,
    InvalidArgumentError,
    ConfigError,
    SolverError,
    SolverDivergenceError,
    NumericalFailureError,
    AdjointConvergenceError,
    TrainingError,
    GpeTrainingError,
    DeepEnsembleTrainingError,
    ArtifactIOError,
    InternalError,
    exit_code_for
)

__version__ = "0.1.0"
__all__ = [
    "RunConfig",
    "CaseConfig",
    "BetacError",
    "InvalidArgumentError",
    "ConfigError",
    "SolverError",
    "SolverDivergenceError",
    "NumericalFailureError",
    "AdjointConvergenceError",
    "TrainingError",
    "GpeTrainingError",
    "DeepEnsembleTrainingError",
    "ArtifactIOError",
    "InternalError",
    "exit_code_for",
]
