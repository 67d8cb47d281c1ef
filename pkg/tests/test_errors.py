"""
Unit tests for error handling.
"""
import pytest
from pydantic import BaseModel, ValidationError

import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from betac_toolkit.errors import (
    AdjointConvergenceError,
    ArtifactIOError,
    BetacError,
    ConfigError,
    DeepEnsembleTrainingError,
    GpeTrainingError,
    InternalError,
    InvalidArgumentError,
    NumericalFailureError,
    SolverDivergenceError,
    SolverError,
    TrainingError,
    exit_code_for,
)


class TestBetacError:

    def test_basic_error(self):
        error = BetacError("Something broke")

        assert error.message == "Something broke"
        assert error.payload == {}
        assert error.stage is None
        assert error.exit_code == 1

    def test_error_with_payload(self):
        payload = {"case": "channel_re180", "iteration": 12}
        error = BetacError("Failed", payload=payload)

        assert error.payload == payload

    def test_stage_prefix(self):
        error = BetacError("Residual exploded", stage="invert")

        assert error.stage == "invert"
        assert str(error) == "[invert] Residual exploded"

    def test_repr(self):
        error = SolverError("Stalled", stage="solve")

        text = repr(error)
        assert "SolverError" in text
        assert "exit_code=3" in text
        assert "'solve'" in text


class TestSpecificErrors:

    @pytest.mark.parametrize("error_cls,code", [
        (InvalidArgumentError, 2),
        (ConfigError, 2),
        (SolverError, 3),
        (SolverDivergenceError, 3),
        (NumericalFailureError, 3),
        (AdjointConvergenceError, 3),
        (TrainingError, 4),
        (GpeTrainingError, 4),
        (DeepEnsembleTrainingError, 4),
        (ArtifactIOError, 5),
        (InternalError, 1),
    ])
    def test_exit_codes(self, error_cls, code):
        error = error_cls()
        assert error.exit_code == code
        assert exit_code_for(error) == code

    def test_invalid_argument_is_value_error(self):
        with pytest.raises(ValueError):
            raise InvalidArgumentError("bad n_cells")

    def test_divergence_keeps_partial_state(self):
        partial = object()
        error = SolverDivergenceError(partial_state=partial, history=[1.0, 0.5])

        assert error.partial_state is partial
        assert error.history == [1.0, 0.5]
        assert "did not converge" in error.message

    def test_training_error_source(self):
        error = GpeTrainingError(source="channel_re395")

        assert error.source == "channel_re395"
        assert isinstance(error, TrainingError)

    def test_artifact_path(self):
        error = ArtifactIOError("Missing", path="runs/model.npz")

        assert error.path == "runs/model.npz"


class TestExitCodeFor:

    def test_validation_error(self):
        class Strict(BaseModel):
            n: int

        with pytest.raises(ValidationError) as exc_info:
            Strict(n="many")
        assert exit_code_for(exc_info.value) == 2

    def test_file_errors(self):
        assert exit_code_for(FileNotFoundError("gone")) == 5
        assert exit_code_for(PermissionError("denied")) == 5
        assert exit_code_for(OSError("disk")) == 5

    def test_unexpected_error(self):
        assert exit_code_for(RuntimeError("boom")) == 1
        assert exit_code_for(KeyError("x")) == 1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
