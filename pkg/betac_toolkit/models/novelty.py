"""
Fitted local outlier factor model.
"""
from dataclasses import dataclass

import numpy as np
from sklearn.neighbors import NearestNeighbors


@dataclass(frozen=True, eq=False)
class LofModel:
    """Reference features with their k-distances and local reachability densities."""

    X: np.ndarray
    n_neighbors: int
    index: NearestNeighbors
    k_distance: np.ndarray
    lrd: np.ndarray
    training_scores: np.ndarray

    @property
    def width(self) -> int:
        return self.X.shape[1]

    @property
    def n_reference(self) -> int:
        return self.X.shape[0]
