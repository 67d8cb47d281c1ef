"""
Sparse Jacobians of the discrete residual by graph-coloured central differences.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from ..errors import InternalError, InvalidArgumentError
from ..models.mesh import Mesh


logger = logging.getLogger(__name__)

# Cell hops over which one residual row can see an unknown (face fluxes reach
# through momentum-interpolation coefficients of the neighbour's neighbours).
STENCIL_RADIUS = 3


@dataclass(frozen=True, eq=False)
class JacobianStructure:
    pattern: sparse.csr_matrix
    colors: np.ndarray

    @property
    def n_colors(self) -> int:
        return int(self.colors.max()) + 1 if len(self.colors) else 0


def stencil_pattern(mesh: Mesh, n_vars: int, radius: int = STENCIL_RADIUS) -> sparse.csr_matrix:
    """Structural non-zeros over fluid-cell unknowns, interleaved per cell."""
    fluid_cells = np.flatnonzero(mesh.fluid)
    index = np.full(mesh.n_cells, -1, dtype=int)
    index[fluid_cells] = np.arange(len(fluid_cells))
    faces = mesh.interior_faces
    P = index[mesh.face_owner[faces]]
    N = index[mesh.face_neighbour[faces]]
    n = len(fluid_cells)

    adjacency = sparse.csr_matrix(
        (np.ones(2 * len(P) + n), (np.concatenate([P, N, np.arange(n)]), np.concatenate([N, P, np.arange(n)]))),
        shape=(n, n),
    )
    adjacency.data[:] = 1.0
    reach = sparse.identity(n, format="csr")
    for _ in range(radius):
        reach = reach @ adjacency
        reach.data[:] = 1.0
    block = sparse.csr_matrix(np.ones((n_vars, n_vars)))
    pattern = sparse.kron(reach, block, format="csr")
    pattern.data[:] = 1.0
    return pattern


def color_columns(pattern: sparse.csr_matrix) -> np.ndarray:
    """Greedy distance-2 colouring: columns sharing a row get different colours."""
    structure = pattern.copy()
    structure.data[:] = 1.0
    conflicts = (structure.T @ structure).tocsr()
    n = pattern.shape[1]
    colors = np.full(n, -1, dtype=int)
    for j in range(n):
        nbrs = conflicts.indices[conflicts.indptr[j]:conflicts.indptr[j + 1]]
        used = set(colors[nbrs].tolist())
        color = 0
        while color in used:
            color += 1
        colors[j] = color
    return colors


def verify_coloring(pattern: sparse.csr_matrix, colors: np.ndarray) -> None:
    coo = pattern.tocoo()
    n_colors = int(colors.max()) + 1 if len(colors) else 1
    keys = coo.row.astype(np.int64) * n_colors + colors[coo.col]
    if len(np.unique(keys)) != coo.nnz:
        raise InternalError("Column colouring assigns one colour twice within a row")


@lru_cache(maxsize=32)
def jacobian_structure(mesh: Mesh, n_vars: int, radius: int = STENCIL_RADIUS) -> JacobianStructure:
    pattern = stencil_pattern(mesh, n_vars, radius)
    colors = color_columns(pattern)
    verify_coloring(pattern, colors)
    logger.debug(
        f"Coloured {pattern.shape[1]} columns with {int(colors.max()) + 1} colours",
        extra={'n_columns': pattern.shape[1], 'n_colors': int(colors.max()) + 1}
    )
    return JacobianStructure(pattern=pattern, colors=colors)


def perturbation_steps(w: np.ndarray, step: float, typical: Optional[np.ndarray] = None) -> np.ndarray:
    """step * (1 + |w|), or step * max(|w|, typical) when per-unknown floors are given."""
    if not np.isfinite(step) or step <= 0:
        raise InvalidArgumentError(f"Finite-difference step must be positive, got {step}")
    if typical is None:
        return step * (1.0 + np.abs(w))
    typical = np.asarray(typical, dtype=float)
    if np.any(typical <= 0):
        raise InvalidArgumentError("Finite-difference step floors must be positive")
    return step * np.maximum(np.abs(w), typical)


def colored_jacobian(
    fun: Callable[[np.ndarray], np.ndarray],
    w: np.ndarray,
    structure: JacobianStructure,
    step: float = 1e-6,
    typical: Optional[np.ndarray] = None
) -> sparse.csr_matrix:
    h = perturbation_steps(w, step, typical)
    coo = structure.pattern.tocoo()
    rows, cols = coo.row, coo.col
    entry_colors = structure.colors[cols]
    order = np.argsort(entry_colors, kind="stable")
    bounds = np.searchsorted(entry_colors[order], np.arange(structure.n_colors + 1))

    values = np.zeros(coo.nnz)
    for color in range(structure.n_colors):
        members = np.flatnonzero(structure.colors == color)
        w_plus = w.copy()
        w_minus = w.copy()
        w_plus[members] += h[members]
        w_minus[members] -= h[members]
        delta = fun(w_plus) - fun(w_minus)
        entries = order[bounds[color]:bounds[color + 1]]
        values[entries] = delta[rows[entries]] / (2.0 * h[cols[entries]])

    n = len(w)
    return sparse.csr_matrix((values, (rows, cols)), shape=(n, n))


def dense_jacobian(
    fun: Callable[[np.ndarray], np.ndarray],
    w: np.ndarray,
    step: float = 1e-6,
    typical: Optional[np.ndarray] = None
) -> np.ndarray:
    """Column-by-column central differences; reference for the coloured assembly."""
    h = perturbation_steps(w, step, typical)
    n = len(w)
    jac = np.zeros((n, n))
    for j in range(n):
        w_plus = w.copy()
        w_minus = w.copy()
        w_plus[j] += h[j]
        w_minus[j] -= h[j]
        jac[:, j] = (fun(w_plus) - fun(w_minus)) / (2.0 * h[j])
    return jac
