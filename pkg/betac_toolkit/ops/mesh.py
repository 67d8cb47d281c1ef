"""
Mesh construction, geometric metrics and discrete gradient operators.
"""
import logging
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import InvalidArgumentError
from ..models.mesh import FaceTag, Mesh


logger = logging.getLogger(__name__)


def _require_count(name: str, value, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidArgumentError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def _require_positive(name: str, value) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be finite and positive, got {value}")
    return value


def geometric_nodes(n_cells: int, stretch_ratio: float, length: float) -> np.ndarray:
    """Node coordinates from 0 to length with spacings growing by stretch_ratio."""
    if stretch_ratio == 1.0:
        spacing = np.full(n_cells, length / n_cells)
    else:
        first = length * (stretch_ratio - 1.0) / (stretch_ratio ** n_cells - 1.0)
        spacing = first * stretch_ratio ** np.arange(n_cells)
    nodes = np.concatenate([[0.0], np.cumsum(spacing)])
    nodes[-1] = length
    return nodes


def _wall_distance(centers: np.ndarray, blanked: np.ndarray, face_center: np.ndarray,
                   face_tag: np.ndarray) -> np.ndarray:
    walls = face_center[face_tag == FaceTag.WALL]
    if len(walls) == 0:
        raise InvalidArgumentError("Mesh has no wall faces")
    distance = np.zeros(len(centers))
    fluid = ~blanked
    distance[fluid] = cdist(centers[fluid], walls).min(axis=1)
    return distance


def _cartesian_faces(
    x_nodes: np.ndarray,
    y_nodes: np.ndarray,
    blanked: np.ndarray,
    sides: Dict[str, FaceTag]
) -> Tuple[np.ndarray, ...]:
    nx, ny = len(x_nodes) - 1, len(y_nodes) - 1
    dx, dy = np.diff(x_nodes), np.diff(y_nodes)
    xc = 0.5 * (x_nodes[1:] + x_nodes[:-1])
    yc = 0.5 * (y_nodes[1:] + y_nodes[:-1])

    def fluid(i: int, j: int) -> bool:
        return 0 <= i < nx and 0 <= j < ny and not blanked[j * nx + i]

    interior: List[tuple] = []
    boundary: List[tuple] = []

    # x-normal faces
    for j in range(ny):
        for i in range(nx + 1):
            left, right = fluid(i - 1, j), fluid(i, j)
            center = (x_nodes[i], yc[j])
            if left and right:
                interior.append((j * nx + i - 1, j * nx + i, dy[j], (1.0, 0.0), center, FaceTag.INTERIOR))
            elif left:
                tag = sides["right"] if i == nx else FaceTag.WALL
                boundary.append((j * nx + i - 1, -1, dy[j], (1.0, 0.0), center, tag))
            elif right:
                tag = sides["left"] if i == 0 else FaceTag.WALL
                boundary.append((j * nx + i, -1, dy[j], (-1.0, 0.0), center, tag))

    # y-normal faces
    for j in range(ny + 1):
        for i in range(nx):
            below, above = fluid(i, j - 1), fluid(i, j)
            center = (xc[i], y_nodes[j])
            if below and above:
                interior.append(((j - 1) * nx + i, j * nx + i, dx[i], (0.0, 1.0), center, FaceTag.INTERIOR))
            elif below:
                tag = sides["top"] if j == ny else FaceTag.WALL
                boundary.append(((j - 1) * nx + i, -1, dx[i], (0.0, 1.0), center, tag))
            elif above:
                tag = sides["bottom"] if j == 0 else FaceTag.WALL
                boundary.append((j * nx + i, -1, dx[i], (0.0, -1.0), center, tag))

    faces = interior + boundary
    owner = np.array([f[0] for f in faces], dtype=int)
    neighbour = np.array([f[1] for f in faces], dtype=int)
    area = np.array([f[2] for f in faces], dtype=float)
    normal = np.array([f[3] for f in faces], dtype=float)
    center = np.array([f[4] for f in faces], dtype=float)
    tag = np.array([int(f[5]) for f in faces], dtype=np.int8)
    return owner, neighbour, area, normal, center, tag


def _assemble(dimensionality: int, x_nodes: np.ndarray, y_nodes: np.ndarray,
              blanked: np.ndarray, sides: Dict[str, FaceTag]) -> Mesh:
    nx, ny = len(x_nodes) - 1, len(y_nodes) - 1
    xc = 0.5 * (x_nodes[1:] + x_nodes[:-1])
    yc = 0.5 * (y_nodes[1:] + y_nodes[:-1])
    X, Y = np.meshgrid(xc, yc)
    centers = np.column_stack([X.ravel(), Y.ravel()])
    DX, DY = np.meshgrid(np.diff(x_nodes), np.diff(y_nodes))
    volumes = (DX * DY).ravel()

    owner, neighbour, area, normal, center, tag = _cartesian_faces(x_nodes, y_nodes, blanked, sides)
    distance = _wall_distance(centers, blanked, center, tag)

    mesh = Mesh(
        dimensionality=dimensionality,
        nx=nx,
        ny=ny,
        x_nodes=x_nodes,
        y_nodes=y_nodes,
        centers=centers,
        volumes=volumes,
        blanked=blanked,
        face_owner=owner,
        face_neighbour=neighbour,
        face_area=area,
        face_normal=normal,
        face_center=center,
        face_tag=tag,
        wall_distance=distance,
    )
    for array in (x_nodes, y_nodes, centers, volumes, blanked, owner, neighbour,
                  area, normal, center, tag, distance):
        array.setflags(write=False)
    return mesh


def build_channel_1d(n_cells: int, stretch_ratio: float, half_height: float) -> Mesh:
    """Wall-normal channel mesh: wall at y=0, symmetry plane at y=half_height.

    The streamwise direction is a single periodic cell of unit width.
    """
    n_cells = _require_count("n_cells", n_cells, 8)
    stretch_ratio = float(stretch_ratio)
    if not np.isfinite(stretch_ratio) or stretch_ratio < 1.0:
        raise InvalidArgumentError(f"stretch_ratio must be finite and >= 1, got {stretch_ratio}")
    half_height = _require_positive("half_height", half_height)

    x_nodes = np.array([0.0, 1.0])
    y_nodes = geometric_nodes(n_cells, stretch_ratio, half_height)
    blanked = np.zeros(n_cells, dtype=bool)
    sides = {
        "left": FaceTag.PERIODIC,
        "right": FaceTag.PERIODIC,
        "bottom": FaceTag.WALL,
        "top": FaceTag.SYMMETRY,
    }
    mesh = _assemble(1, x_nodes, y_nodes, blanked, sides)
    logger.debug(
        f"Built 1D channel mesh with {n_cells} cells",
        extra={'n_cells': n_cells, 'stretch_ratio': stretch_ratio, 'first_spacing': float(mesh.dy[0])}
    )
    return mesh


def build_step_2d(
    nx: int,
    ny: int,
    step_height_fraction: float,
    domain_length: float,
    domain_height: float,
    step_length_fraction: float = 0.25
) -> Mesh:
    """Uniform Cartesian channel with a blanked step at the inlet, bottom left."""
    nx = _require_count("nx", nx, 16)
    ny = _require_count("ny", ny, 16)
    domain_length = _require_positive("domain_length", domain_length)
    domain_height = _require_positive("domain_height", domain_height)
    step_height_fraction = float(step_height_fraction)
    if not (0.0 < step_height_fraction < 1.0):
        raise InvalidArgumentError(
            f"step_height_fraction must lie in (0, 1), got {step_height_fraction}"
        )
    if not (0.0 < step_length_fraction < 1.0):
        raise InvalidArgumentError(
            f"step_length_fraction must lie in (0, 1), got {step_length_fraction}"
        )

    x_nodes = np.linspace(0.0, domain_length, nx + 1)
    y_nodes = np.linspace(0.0, domain_height, ny + 1)
    xc = 0.5 * (x_nodes[1:] + x_nodes[:-1])
    yc = 0.5 * (y_nodes[1:] + y_nodes[:-1])
    X, Y = np.meshgrid(xc, yc)
    x_step = step_length_fraction * domain_length
    y_step = step_height_fraction * domain_height
    blanked = ((X < x_step) & (Y < y_step)).ravel()

    if blanked.reshape(ny, nx)[:, 0].all():
        raise InvalidArgumentError("Step blocks the whole inlet")

    sides = {
        "left": FaceTag.INLET,
        "right": FaceTag.OUTLET,
        "bottom": FaceTag.WALL,
        "top": FaceTag.WALL,
    }
    mesh = _assemble(2, x_nodes, y_nodes, blanked, sides)
    logger.debug(
        f"Built step mesh {nx}x{ny} with {int(blanked.sum())} blanked cells",
        extra={'nx': nx, 'ny': ny, 'blanked': int(blanked.sum())}
    )
    return mesh


def build_channel_2d(
    nx: int,
    ny: int,
    domain_length: float,
    domain_height: float,
    top: FaceTag = FaceTag.WALL
) -> Mesh:
    """Developing 2D channel, inlet left, outlet right, walls (or symmetry) above and below."""
    nx = _require_count("nx", nx, 2)
    ny = _require_count("ny", ny, 2)
    domain_length = _require_positive("domain_length", domain_length)
    domain_height = _require_positive("domain_height", domain_height)
    if top not in (FaceTag.WALL, FaceTag.SYMMETRY):
        raise InvalidArgumentError(f"Top boundary must be wall or symmetry, got {top!r}")

    x_nodes = np.linspace(0.0, domain_length, nx + 1)
    y_nodes = np.linspace(0.0, domain_height, ny + 1)
    blanked = np.zeros(nx * ny, dtype=bool)
    sides = {
        "left": FaceTag.INLET,
        "right": FaceTag.OUTLET,
        "bottom": FaceTag.WALL,
        "top": FaceTag(top),
    }
    return _assemble(2, x_nodes, y_nodes, blanked, sides)


@lru_cache(maxsize=32)
def interpolation_weights(mesh: Mesh) -> np.ndarray:
    """Owner weight of the linear interpolation at each interior face."""
    faces = mesh.interior_faces
    P, N = mesh.face_owner[faces], mesh.face_neighbour[faces]
    n = mesh.face_normal[faces]
    d_fN = np.abs(np.einsum("ij,ij->i", mesh.centers[N] - mesh.face_center[faces], n))
    d_PN = np.abs(np.einsum("ij,ij->i", mesh.centers[N] - mesh.centers[P], n))
    return d_fN / d_PN


@lru_cache(maxsize=32)
def boundary_extrapolation(mesh: Mesh) -> Tuple[np.ndarray, np.ndarray]:
    """Opposite cell and distance ratio used to extrapolate to each boundary face.

    The opposite cell is the owner's face neighbour on the far side along the
    face normal; -1 where none exists (zero-gradient extrapolation).
    """
    faces = mesh.boundary_faces
    opposite = np.full(len(faces), -1, dtype=int)
    ratio = np.zeros(len(faces))
    for m, f in enumerate(faces):
        P = mesh.face_owner[f]
        n = mesh.face_normal[f]
        for O in mesh.neighbours[P]:
            offset = mesh.centers[O] - mesh.centers[P]
            along = float(offset @ n)
            if along < 0 and np.isclose(abs(along), np.linalg.norm(offset)):
                opposite[m] = O
                d_Pf = abs(float((mesh.face_center[f] - mesh.centers[P]) @ n))
                ratio[m] = d_Pf / abs(along)
                break
    return opposite, ratio


def boundary_values(field: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Linear extrapolation of a cell field to the boundary faces."""
    opposite, ratio = boundary_extrapolation(mesh)
    P = mesh.face_owner[mesh.boundary_faces]
    values = field[P].astype(float)
    has = opposite >= 0
    values[has] += (field[P[has]] - field[opposite[has]]) * ratio[has]
    return values


def green_gauss(field: np.ndarray, mesh: Mesh, face_boundary_values: np.ndarray) -> np.ndarray:
    """Green-Gauss cell gradient given explicit boundary-face values."""
    grad = np.zeros((mesh.n_cells, 2))
    faces = mesh.interior_faces
    P, N = mesh.face_owner[faces], mesh.face_neighbour[faces]
    w = interpolation_weights(mesh)
    phi_f = w * field[P] + (1.0 - w) * field[N]
    flux = (phi_f * mesh.face_area[faces])[:, None] * mesh.face_normal[faces]
    np.add.at(grad, P, flux)
    np.add.at(grad, N, -flux)

    bfaces = mesh.boundary_faces
    bflux = (face_boundary_values * mesh.face_area[bfaces])[:, None] * mesh.face_normal[bfaces]
    np.add.at(grad, mesh.face_owner[bfaces], bflux)

    grad /= mesh.volumes[:, None]
    grad[mesh.blanked] = 0.0
    return grad


def gradient(field: np.ndarray, mesh: Mesh) -> np.ndarray:
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.n_cells,):
        raise InvalidArgumentError(
            f"Field shape {field.shape} does not match mesh with {mesh.n_cells} cells"
        )

    if mesh.dimensionality == 1:
        grad = np.zeros((mesh.n_cells, 2))
        grad[:, 1] = np.gradient(field, mesh.centers[:, 1])
        return grad

    return green_gauss(field, mesh, boundary_values(field, mesh))


def boundary_flux(face_values: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Surface integral of a scalar over all boundary faces, as a vector."""
    bfaces = mesh.boundary_faces
    face_values = np.asarray(face_values, dtype=float)
    if face_values.shape != (len(bfaces),):
        raise InvalidArgumentError(
            f"Expected {len(bfaces)} boundary values, got shape {face_values.shape}"
        )
    return (face_values * mesh.face_area[bfaces]) @ mesh.face_normal[bfaces]


def closure_residual(mesh: Mesh) -> np.ndarray:
    """Sum of outward area vectors per cell; zero for a closed control volume."""
    total = np.zeros((mesh.n_cells, 2))
    vectors = mesh.face_area[:, None] * mesh.face_normal
    np.add.at(total, mesh.face_owner, vectors)
    interior = mesh.interior_faces
    np.add.at(total, mesh.face_neighbour[interior], -vectors[interior])
    return total
