"""
Models for flow states, corrections and solver settings.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..errors import InvalidArgumentError
from .mesh import Mesh


class TurbulenceModel(str, Enum):
    SST = "sst"
    WILCOX = "wilcox"
    LAMINAR = "laminar"


class ConvectionScheme(str, Enum):
    SECOND_ORDER_UPWIND = "sou"
    UPWIND = "upwind"


@dataclass(frozen=True)
class TurbulenceConstants:
    """Closure coefficients; set 1 is the inner (k-omega) set, set 2 the outer one."""

    beta_star: float = 0.09
    a1: float = 0.31
    kappa: float = 0.41
    sigma_k1: float = 0.85
    sigma_k2: float = 1.0
    sigma_w1: float = 0.5
    sigma_w2: float = 0.856
    beta1: float = 0.075
    beta2: float = 0.0828
    gamma1: float = 5.0 / 9.0
    gamma2: float = 0.44
    cd_floor: float = 1e-10
    production_limit: float = 10.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not np.isfinite(value) or value <= 0:
                raise InvalidArgumentError(f"Turbulence constant {name} must be positive, got {value}")

    @classmethod
    def wilcox(cls) -> "TurbulenceConstants":
        return cls(sigma_k1=0.5, sigma_k2=0.5, sigma_w1=0.5, sigma_w2=0.5,
                   beta2=0.075, gamma2=5.0 / 9.0)

    def blend(self, f1: np.ndarray, name: str) -> np.ndarray:
        inner = getattr(self, f"{name}1")
        outer = getattr(self, f"{name}2")
        return f1 * inner + (1.0 - f1) * outer


class BoundaryConditions(BaseModel):
    nu: float = Field(..., gt=0, description="Molecular kinematic viscosity")
    forcing: float = Field(
        0.0,
        description="Mean driving kinematic pressure gradient -dp/dx (1D channel)"
    )
    inlet_velocity: Optional[float] = Field(None, description="Uniform inlet streamwise velocity")
    inlet_k: Optional[float] = Field(None, gt=0, description="Inlet turbulent kinetic energy")
    inlet_omega: Optional[float] = Field(None, gt=0, description="Inlet specific dissipation rate")
    outlet_pressure: float = Field(0.0, description="Outlet kinematic pressure")

    class Config:
        extra = "forbid"


class SolverSettings(BaseModel):
    model: TurbulenceModel = Field(TurbulenceModel.SST, description="Turbulence closure")
    tolerance: float = Field(1e-6, gt=0, description="Normalised residual tolerance per equation")
    max_iterations: int = Field(500, ge=1)
    relax_momentum: float = Field(0.7, gt=0, le=1)
    relax_pressure: float = Field(0.3, gt=0, le=1)
    relax_turbulence: float = Field(0.5, gt=0, le=1)
    scheme: ConvectionScheme = Field(ConvectionScheme.SECOND_ORDER_UPWIND)
    divergence_factor: float = Field(1e4, gt=1, description="Allowed growth over the best residual")
    cfl_initial: float = Field(10.0, gt=0, description="Initial pseudo-time CFL (1D Newton)")
    cfl_max: float = Field(1e12, gt=0)
    beta_min: float = Field(1e-3, gt=0, description="Lower bound applied to beta_c inside solves")
    jacobian_step: float = Field(1e-6, gt=0)

    class Config:
        extra = "forbid"


@dataclass
class CorrectionField:
    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if not np.all(np.isfinite(self.beta)):
            raise InvalidArgumentError("Correction field contains non-finite values")
        if np.any(self.beta <= 0):
            raise InvalidArgumentError("Correction field must be strictly positive")

    @classmethod
    def uniform(cls, n_cells: int, value: float = 1.0) -> "CorrectionField":
        return cls(beta=np.full(n_cells, value, dtype=float))

    @property
    def active(self) -> np.ndarray:
        return self.beta != 1.0

    @property
    def n_cells(self) -> int:
        return len(self.beta)

    def copy(self) -> "CorrectionField":
        return CorrectionField(beta=self.beta.copy())


BetaLike = Union[CorrectionField, np.ndarray, float]


def beta_array(beta_c: BetaLike, n_cells: int) -> np.ndarray:
    values = beta_c.beta if isinstance(beta_c, CorrectionField) else np.asarray(beta_c, dtype=float)
    if values.ndim == 0:
        return np.full(n_cells, float(values))
    if values.shape != (n_cells,):
        raise InvalidArgumentError(f"beta_c has shape {values.shape}, mesh has {n_cells} cells")
    return np.array(values, dtype=float)


@dataclass
class FlowState:
    mesh: Mesh
    nu: float
    model: TurbulenceModel
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    k: np.ndarray
    omega: np.ndarray
    nu_t: np.ndarray
    forcing: float = 0.0
    residual_norms: Dict[str, float] = field(default_factory=dict)
    history: List[Dict[str, float]] = field(default_factory=list)
    clip_events: int = 0
    iterations: int = 0
    bc: Optional[BoundaryConditions] = None

    @property
    def equations(self) -> Tuple[str, ...]:
        return equations_for(self.mesh, self.model)

    @property
    def velocity(self) -> np.ndarray:
        return np.column_stack([self.u, self.v])

    @property
    def pressure_gradient_mean(self) -> np.ndarray:
        """Imposed mean pressure gradient not carried by p (fully developed channel)."""
        return np.array([-self.forcing, 0.0])

    def copy(self) -> "FlowState":
        return replace(
            self,
            u=self.u.copy(), v=self.v.copy(), p=self.p.copy(),
            k=self.k.copy(), omega=self.omega.copy(), nu_t=self.nu_t.copy(),
            residual_norms=dict(self.residual_norms),
            history=list(self.history),
        )


def equations_for(mesh: Mesh, model: TurbulenceModel) -> Tuple[str, ...]:
    """Unknowns per cell, in interleaved order."""
    if mesh.dimensionality == 1:
        base: Tuple[str, ...] = ("u",)
    else:
        base = ("u", "v", "p")
    if model == TurbulenceModel.LAMINAR:
        return base
    return base + ("k", "omega")
