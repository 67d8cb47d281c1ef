"""
Local non-dimensional flow features and training-set assembly.
"""
import logging
from dataclasses import dataclass
from functools import reduce
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InvalidArgumentError
from ..models.features import (
    BandFilterRecord,
    INVARIANT_BASIS,
    N_FEATURES,
    TrainingSet,
    TrainingSource,
)
from ..models.flow import CorrectionField, FlowState, beta_array
from ..models.mesh import Mesh
from .mesh import gradient


logger = logging.getLogger(__name__)

DEFAULT_BAND = (0.9, 1.1)

_LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI_CIVITA[_i, _j, _k] = 1.0
    _LEVI_CIVITA[_i, _k, _j] = -1.0


def _safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """numerator / denominator with 0/0 taken as 0."""
    out = np.zeros(np.broadcast(numerator, denominator).shape)
    np.divide(numerator, denominator, out=out, where=denominator != 0)
    return out


def frobenius(tensor: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("nij,nij->n", tensor, tensor))


def antisymmetric_from_vector(vector: np.ndarray) -> np.ndarray:
    """-I x g: the antisymmetric tensor associated with a 3-vector g."""
    return -np.einsum("bad,nd->nab", _LEVI_CIVITA, vector)


@dataclass
class FlowTensors:
    velocity_gradient: np.ndarray
    strain: np.ndarray
    rotation: np.ndarray
    grad_p: np.ndarray
    grad_k: np.ndarray
    velocity: np.ndarray
    convective: np.ndarray


def _as3(vectors: np.ndarray) -> np.ndarray:
    out = np.zeros((vectors.shape[0], 3))
    out[:, :vectors.shape[1]] = vectors
    return out


def flow_tensors(state: FlowState, mesh: Optional[Mesh] = None) -> FlowTensors:
    mesh = mesh or state.mesh
    n = mesh.n_cells
    grad_u = gradient(state.u, mesh)
    grad_v = gradient(state.v, mesh)
    J = np.zeros((n, 3, 3))
    J[:, 0, :2] = grad_u
    J[:, 1, :2] = grad_v
    velocity = _as3(state.velocity)
    # the imposed mean gradient of a periodic channel is not carried by p
    grad_p = _as3(gradient(state.p, mesh) + state.pressure_gradient_mean)
    return FlowTensors(
        velocity_gradient=J,
        strain=0.5 * (J + J.transpose(0, 2, 1)),
        rotation=0.5 * (J - J.transpose(0, 2, 1)),
        grad_p=grad_p,
        grad_k=_as3(gradient(state.k, mesh)),
        velocity=velocity,
        convective=np.einsum("nij,nj->ni", J, velocity),
    )


def engineered_from_values(
    grad_p: np.ndarray,
    velocity: np.ndarray,
    strain_norm: np.ndarray,
    rotation_norm: np.ndarray,
    k: np.ndarray,
    omega: np.ndarray,
    nu_t: np.ndarray,
    nu: float
) -> np.ndarray:
    speed = np.linalg.norm(velocity, axis=1)
    cosine = _safe_ratio(np.einsum("ni,ni->n", grad_p, velocity), np.linalg.norm(grad_p, axis=1) * speed)
    undefined = (np.linalg.norm(grad_p, axis=1) * speed) == 0
    pressure = np.where(undefined, 0.0, 2.0 / np.pi * np.arccos(np.clip(cosine, -1.0, 1.0)) - 1.0)

    time_scale = 2.0 * (_safe_ratio(strain_norm, strain_norm + omega) ** 0.25 - 0.5)
    q_criterion = _safe_ratio(strain_norm ** 2 - rotation_norm ** 2, strain_norm ** 2 + rotation_norm ** 2)
    k_pos = np.maximum(k, 0.0)
    intensity = 2.0 * (_safe_ratio(k_pos, 0.5 * speed ** 2 + k_pos) ** 0.25 - 0.5)
    viscosity = 2.0 * (_safe_ratio(nu_t, 100.0 * nu + nu_t) - 0.5)
    return np.column_stack([pressure, time_scale, q_criterion, intensity, viscosity])


def engineered_features(state: FlowState, mesh: Optional[Mesh] = None) -> np.ndarray:
    """The five bounded engineered features per cell, each in [-1, 1]."""
    tensors = flow_tensors(state, mesh)
    return engineered_from_values(
        tensors.grad_p,
        tensors.velocity,
        frobenius(tensors.strain),
        frobenius(tensors.rotation),
        state.k,
        state.omega,
        state.nu_t,
        state.nu,
    )


def invariants_from_tensors(
    S: np.ndarray,
    W: np.ndarray,
    Ap: np.ndarray,
    Ak: np.ndarray,
    squash: bool = True
) -> np.ndarray:
    """Traces of the integrity-basis products of already non-dimensional tensors."""
    factors = {
        "S": S,
        "S2": S @ S,
        "W": W,
        "W2": W @ W,
        "Ap": Ap,
        "Ap2": Ap @ Ap,
        "Ak": Ak,
        "Ak2": Ak @ Ak,
    }
    columns = []
    for word in INVARIANT_BASIS:
        product = reduce(np.matmul, (factors[name] for name in word))
        columns.append(np.einsum("nii->n", product))
    raw = np.column_stack(columns)
    return raw / (np.abs(raw) + 1.0) if squash else raw


def normalized_tensors(state: FlowState, mesh: Optional[Mesh] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    tensors = flow_tensors(state, mesh)
    omega = np.maximum(state.omega, 0.0)
    k_pos = np.maximum(state.k, 0.0)
    Ap = antisymmetric_from_vector(tensors.grad_p)
    Ak = antisymmetric_from_vector(tensors.grad_k)

    def scaled(tensor: np.ndarray, reference: np.ndarray) -> np.ndarray:
        return _safe_ratio(tensor, (frobenius(tensor) + reference)[:, None, None])

    return (
        scaled(tensors.strain, omega),
        scaled(tensors.rotation, omega),
        scaled(Ap, np.linalg.norm(tensors.convective, axis=1)),
        scaled(Ak, omega * np.sqrt(k_pos)),
    )


def invariant_features(state: FlowState, mesh: Optional[Mesh] = None, squash: bool = True) -> np.ndarray:
    S, W, Ap, Ak = normalized_tensors(state, mesh)
    return invariants_from_tensors(S, W, Ap, Ak, squash=squash)


def compute_features(state: FlowState, squash: bool = True) -> np.ndarray:
    """Feature matrix of shape (n_cells, 52); blanked rows are zero."""
    features = np.hstack([engineered_features(state), invariant_features(state, squash=squash)])
    features[state.mesh.blanked] = 0.0
    if not np.all(np.isfinite(features)):
        raise InvalidArgumentError("Non-finite feature values; is the state converged?")
    return features


def band_mask(targets: np.ndarray, band: Sequence[float] = DEFAULT_BAND) -> np.ndarray:
    """True where a target lies outside the closed band."""
    lower, upper = _check_band(band)
    targets = np.asarray(targets, dtype=float)
    return (targets < lower) | (targets > upper)


def _check_band(band: Sequence[float]) -> Tuple[float, float]:
    if len(band) != 2:
        raise InvalidArgumentError(f"Band needs two bounds, got {band!r}")
    lower, upper = float(band[0]), float(band[1])
    if not (np.isfinite(lower) and np.isfinite(upper)) or lower > upper:
        raise InvalidArgumentError(f"Invalid band [{lower}, {upper}]")
    return lower, upper


def assemble_from_matrices(
    sources: Sequence[Tuple[np.ndarray, np.ndarray, str]],
    band: Sequence[float] = DEFAULT_BAND,
    cells: Optional[Sequence[Optional[np.ndarray]]] = None,
    provenance: Optional[Sequence[str]] = None
) -> TrainingSet:
    lower, upper = _check_band(band)
    record = BandFilterRecord(lower=lower, upper=upper)
    kept: List[TrainingSource] = []

    for index, (X, Y, name) in enumerate(sources):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        keep = band_mask(Y, (lower, upper))
        record.total[name] = int(len(Y))
        record.retained[name] = int(np.count_nonzero(keep))
        if not np.any(keep):
            record.dropped.append(name)
            logger.warning(
                f"Source {name} has no targets outside [{lower}, {upper}] and was dropped",
                extra={'source': name, 'band': [lower, upper]}
            )
            continue
        source_cells = cells[index] if cells is not None else None
        kept.append(TrainingSource(
            name=name,
            X=X[keep],
            Y=Y[keep],
            cells=np.asarray(source_cells)[keep] if source_cells is not None else None,
            provenance=provenance[index] if provenance is not None else "",
        ))

    logger.info(
        f"Training set: {len(kept)} sources, {sum(record.retained.values())} samples",
        extra={'sources': [s.name for s in kept], 'dropped': record.dropped}
    )
    return TrainingSet(sources=kept, band=record)


def assemble_training_set(
    cases: Sequence[Tuple[FlowState, CorrectionField, str]],
    band: Sequence[float] = DEFAULT_BAND,
    squash: bool = True
) -> TrainingSet:
    """Features of each state paired with its inverted beta_c, band-filtered per source."""
    matrices = []
    cells = []
    for state, beta_c, name in cases:
        fluid = np.flatnonzero(state.mesh.fluid)
        features = compute_features(state, squash=squash)
        beta = beta_array(beta_c, state.mesh.n_cells)
        matrices.append((features[fluid], beta[fluid], name))
        cells.append(fluid)
    training = assemble_from_matrices(matrices, band=band, cells=cells)
    for source in training.sources:
        if source.X.shape[1] != N_FEATURES:
            raise InvalidArgumentError(f"Expected {N_FEATURES} features, got {source.X.shape[1]}")
    return training
