"""
Models for Gaussian process submodels, deep ensembles and ensemble predictions.
"""
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field


class GpeTrainingOptions(BaseModel):
    restarts: int = Field(5, ge=1, description="Seeded restarts of the marginal-likelihood optimiser")
    max_optimizer_iterations: int = Field(200, ge=1)
    sparse_threshold: int = Field(2000, ge=2, description="Above this many samples use inducing points")
    max_inducing: int = Field(512, ge=2)
    hyper_subsample: int = Field(1000, ge=2, description="Samples used to fit hyper-parameters in sparse mode")
    prior_mean: Literal["fitted", "one"] = Field(
        "fitted",
        description="Fit the constant prior mean, or pin it to 1 (the uncorrected model)"
    )
    include_noise: bool = Field(False, description="Add the noise variance to the predictive variance")
    lengthscale_bounds: Tuple[float, float] = Field((1e-2, 1e3))
    signal_variance_bounds: Tuple[float, float] = Field((1e-8, 1e2))
    noise_variance_bounds: Tuple[float, float] = Field((1e-8, 1e1))
    seed: int = Field(0, ge=0)

    class Config:
        extra = "forbid"


class DeepEnsembleOptions(BaseModel):
    members: int = Field(5, ge=2)
    hidden_units: int = Field(64, ge=1)
    hidden_layers: int = Field(2, ge=1)
    epochs: int = Field(500, ge=1)
    learning_rate: float = Field(0.01, gt=0)
    max_restarts: int = Field(3, ge=0, description="Re-initialisations of a member after a non-finite loss")
    seed: int = Field(0, ge=0)
    shared_seed: bool = Field(False, description="Initialise every member from the same seed")

    class Config:
        extra = "forbid"


@dataclass(frozen=True, eq=False)
class GpeSubmodel:
    """Trained per-source GP emulator with an ARD squared-exponential kernel.

    In sparse mode the cached vectors refer to the inducing inputs.
    """

    name: str
    X: np.ndarray
    Y: np.ndarray
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float
    prior_mean: float
    jitter: float
    mode: Literal["exact", "sparse"]
    alpha: np.ndarray
    chol: np.ndarray
    inducing: Optional[np.ndarray] = None
    chol_inducing: Optional[np.ndarray] = None
    include_noise: bool = False

    @property
    def width(self) -> int:
        return self.X.shape[1]

    @property
    def n_train(self) -> int:
        return self.X.shape[0]

    @property
    def prior_std(self) -> float:
        variance = self.signal_variance + (self.noise_variance if self.include_noise else 0.0)
        return float(np.sqrt(variance))


@dataclass
class EnsemblePrediction:
    """Per-query mixture moments; arrays are (n,) or (n, n_models)."""

    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray
    mean: np.ndarray
    variance_mu: np.ndarray
    variance_sigma: np.ndarray
    beta: Optional[np.ndarray] = None
    accepted: Optional[np.ndarray] = None

    @property
    def variance(self) -> np.ndarray:
        return self.variance_mu + self.variance_sigma

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.variance)

    @property
    def sigma_mu(self) -> np.ndarray:
        return np.sqrt(self.variance_mu)

    @property
    def sigma_sigma(self) -> np.ndarray:
        return np.sqrt(self.variance_sigma)

    @property
    def n_models(self) -> int:
        return self.means.shape[1]


@dataclass
class ErrorUncertaintyBins:
    sigma_centers: np.ndarray
    mean_error: np.ndarray
    counts: np.ndarray
    spearman: float
