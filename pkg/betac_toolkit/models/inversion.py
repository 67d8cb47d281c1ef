"""
Models for field inversion problems and their results.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from ..errors import InvalidArgumentError
from .flow import BoundaryConditions, CorrectionField, FlowState, SolverSettings
from .mesh import Mesh


class TerminationReason(str, Enum):
    ZERO_GRADIENT = "zero_gradient"
    MAX_ITERATIONS = "max_iterations"
    PLATEAU = "plateau"
    TARGET_REDUCTION = "target_reduction"
    LINE_SEARCH_FAILED = "line_search_failed"
    SOLVER_FAILURE = "solver_failure"
    OPTIMIZER_CONVERGED = "optimizer_converged"


class OptimizerSettings(BaseModel):
    method: Literal["steepest_descent", "lbfgs"] = Field(
        "steepest_descent",
        description="Steepest descent with Armijo backtracking, or scipy L-BFGS-B"
    )
    initial_step: float = Field(0.1, gt=0, description="Largest beta_c change of the first trial step")
    max_iterations: int = Field(100, ge=1)
    plateau_tolerance: float = Field(1e-3, ge=0, description="Relative J change over the plateau window")
    plateau_window: int = Field(5, ge=1)
    target_reduction: Optional[float] = Field(
        None, gt=0, lt=1,
        description="Stop once J <= target_reduction * J_initial"
    )
    armijo: float = Field(1e-4, gt=0, lt=1)
    max_halvings: int = Field(20, ge=1)
    beta_floor: float = Field(1e-3, gt=0)
    adjoint_solver: Literal["direct", "gmres"] = Field("direct")
    adjoint_tolerance: float = Field(1e-8, gt=0)
    adjoint_max_iterations: int = Field(2000, ge=1)

    class Config:
        extra = "forbid"


@dataclass
class AssimilationData:
    """Reference velocity at the selected cells, in ascending cell order."""

    mask: np.ndarray
    u_ref: np.ndarray
    v_ref: Optional[np.ndarray] = None
    source: str = "reference"

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.u_ref = np.asarray(self.u_ref, dtype=float)
        n_a = int(np.count_nonzero(self.mask))
        if n_a == 0:
            raise InvalidArgumentError("Assimilation mask selects no cells")
        if self.u_ref.shape != (n_a,):
            raise InvalidArgumentError(f"u_ref has {self.u_ref.size} values for {n_a} selected cells")
        if self.v_ref is not None:
            self.v_ref = np.asarray(self.v_ref, dtype=float)
            if self.v_ref.shape != (n_a,):
                raise InvalidArgumentError(f"v_ref has {self.v_ref.size} values for {n_a} selected cells")
        if not np.all(np.isfinite(self.u_ref)):
            raise InvalidArgumentError("u_ref contains non-finite values")

    @property
    def n_assimilated(self) -> int:
        return int(np.count_nonzero(self.mask))

    @property
    def cells(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


@dataclass
class InversionProblem:
    mesh: Mesh
    bc: BoundaryConditions
    data: AssimilationData
    settings: SolverSettings = field(default_factory=SolverSettings)
    regularization: float = 1e-2
    active: Optional[np.ndarray] = None
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)

    def __post_init__(self):
        if not np.isfinite(self.regularization) or self.regularization < 0:
            raise InvalidArgumentError(f"Regularization must be >= 0, got {self.regularization}")
        if self.data.mask.shape != (self.mesh.n_cells,):
            raise InvalidArgumentError("Assimilation mask does not match the mesh")
        if np.any(self.data.mask & self.mesh.blanked):
            raise InvalidArgumentError("Assimilation mask selects blanked cells")
        if self.active is None:
            self.active = self.mesh.fluid.copy()
        self.active = np.asarray(self.active, dtype=bool)
        if self.active.shape != (self.mesh.n_cells,):
            raise InvalidArgumentError("Activity mask does not match the mesh")
        if np.any(self.active & self.mesh.blanked):
            raise InvalidArgumentError("Activity mask includes blanked cells")


@dataclass
class InversionResult:
    beta: CorrectionField
    state: FlowState
    objective_history: List[float]
    gradient_norm_history: List[float]
    reason: TerminationReason
    iterations: int

    @property
    def initial_objective(self) -> float:
        return self.objective_history[0]

    @property
    def final_objective(self) -> float:
        return self.objective_history[-1]

    def summary(self) -> Dict[str, Any]:
        return {
            "termination_reason": self.reason.value,
            "iterations": self.iterations,
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "active_cells": int(np.count_nonzero(self.beta.active)),
        }


@dataclass
class AdjointCheck:
    cells: np.ndarray
    adjoint: np.ndarray
    finite_difference: np.ndarray
    relative_error: np.ndarray
    steps: np.ndarray

    @property
    def max_relative_error(self) -> float:
        return float(np.max(self.relative_error)) if len(self.relative_error) else 0.0
