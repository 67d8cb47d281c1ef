"""
Custom exception classes for the beta_c toolkit.
"""
from typing import Optional, Dict, Any


class BetacError(Exception):

    exit_code = 1

    def __init__(
        self,
        message: str,
        payload: Optional[Dict[str, Any]] = None,
        stage: Optional[str] = None
    ):
        self.message = message
        self.payload = payload or {}
        self.stage = stage

        error_msg = message
        if stage:
            error_msg = f"[{stage}] {message}"

        super().__init__(error_msg)

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(exit_code={self.exit_code}, "
            f"message={self.message!r}, "
            f"stage={self.stage!r})"
        )


class InvalidArgumentError(BetacError, ValueError):

    exit_code = 2

    def __init__(self, message: str = "Invalid argument", **kwargs):
        super().__init__(message=message, **kwargs)


class ConfigError(BetacError):

    exit_code = 2

    def __init__(self, message: str = "Invalid configuration", **kwargs):
        super().__init__(message=message, **kwargs)


class SolverError(BetacError):

    exit_code = 3

    def __init__(self, message: str = "Solver failed", **kwargs):
        super().__init__(message=message, **kwargs)


class SolverDivergenceError(SolverError):

    def __init__(
        self,
        message: str = "Solver did not converge",
        partial_state: Optional[Any] = None,
        history: Optional[list] = None,
        **kwargs
    ):
        super().__init__(message=message, **kwargs)
        self.partial_state = partial_state
        self.history = history or []


class NumericalFailureError(SolverError):

    def __init__(
        self,
        message: str = "Non-finite value in flow field",
        partial_state: Optional[Any] = None,
        history: Optional[list] = None,
        **kwargs
    ):
        super().__init__(message=message, **kwargs)
        self.partial_state = partial_state
        self.history = history or []


class AdjointConvergenceError(SolverError):

    def __init__(self, message: str = "Adjoint solve stagnated", history: Optional[list] = None, **kwargs):
        super().__init__(message=message, **kwargs)
        self.history = history or []


class TrainingError(BetacError):

    exit_code = 4

    def __init__(self, message: str = "Training failed", source: Optional[str] = None, **kwargs):
        super().__init__(message=message, **kwargs)
        self.source = source


class GpeTrainingError(TrainingError):

    def __init__(self, message: str = "Covariance factorisation failed after maximal jitter", **kwargs):
        super().__init__(message=message, **kwargs)


class DeepEnsembleTrainingError(TrainingError):

    def __init__(self, message: str = "Non-finite loss after bounded restarts", **kwargs):
        super().__init__(message=message, **kwargs)


class ArtifactIOError(BetacError):

    exit_code = 5

    def __init__(self, message: str = "Artifact could not be read or written", path: Optional[str] = None, **kwargs):
        super().__init__(message=message, **kwargs)
        self.path = path


class InternalError(BetacError):

    exit_code = 1

    def __init__(self, message: str = "Internal invariant violated", **kwargs):
        super().__init__(message=message, **kwargs)


def exit_code_for(error: BaseException) -> int:

    if isinstance(error, BetacError):
        return error.exit_code

    from pydantic import ValidationError

    error_map = {
        ValidationError: ConfigError.exit_code,
        FileNotFoundError: ArtifactIOError.exit_code,
        PermissionError: ArtifactIOError.exit_code,
        OSError: ArtifactIOError.exit_code,
    }

    # First match wins, so subclasses are listed before OSError
    for error_type, code in error_map.items():
        if isinstance(error, error_type):
            return code

    return 1
