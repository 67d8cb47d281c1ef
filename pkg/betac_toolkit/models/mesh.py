"""
Mesh model for structured channel and step domains.
"""
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import List

import numpy as np


class FaceTag(IntEnum):
    INTERIOR = 0
    WALL = 1
    INLET = 2
    OUTLET = 3
    PERIODIC = 4
    SYMMETRY = 5


@dataclass(frozen=True, eq=False)
class Mesh:
    """Cell-centred structured mesh; cell index is j * nx + i."""

    dimensionality: int
    nx: int
    ny: int
    x_nodes: np.ndarray
    y_nodes: np.ndarray
    centers: np.ndarray
    volumes: np.ndarray
    blanked: np.ndarray
    face_owner: np.ndarray
    face_neighbour: np.ndarray
    face_area: np.ndarray
    face_normal: np.ndarray
    face_center: np.ndarray
    face_tag: np.ndarray
    wall_distance: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_faces(self) -> int:
        return len(self.face_owner)

    @property
    def fluid(self) -> np.ndarray:
        return ~self.blanked

    @property
    def n_fluid(self) -> int:
        return int(self.fluid.sum())

    @property
    def dx(self) -> np.ndarray:
        return np.diff(self.x_nodes)

    @property
    def dy(self) -> np.ndarray:
        return np.diff(self.y_nodes)

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbour >= 0)

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbour < 0)

    @cached_property
    def neighbours(self) -> List[np.ndarray]:
        nbrs: List[list] = [[] for _ in range(self.n_cells)]
        for f in self.interior_faces:
            P, N = self.face_owner[f], self.face_neighbour[f]
            nbrs[P].append(N)
            nbrs[N].append(P)
        return [np.array(sorted(n), dtype=int) for n in nbrs]

    def cell_index(self, i: int, j: int) -> int:
        return j * self.nx + i

    def faces_with_tag(self, tag: FaceTag) -> np.ndarray:
        return np.flatnonzero(self.face_tag == int(tag))
