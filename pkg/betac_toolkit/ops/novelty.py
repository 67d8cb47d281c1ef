"""
Local outlier factor scoring of query features against a reference feature set.
"""
import logging

import numpy as np
from sklearn.neighbors import NearestNeighbors

from ..errors import InvalidArgumentError
from ..models.novelty import LofModel


logger = logging.getLogger(__name__)

DEFAULT_NEIGHBORS = 20
REACH_FLOOR = 1e-12


def _reachability_density(distances: np.ndarray, neighbours: np.ndarray, k_distance: np.ndarray) -> np.ndarray:
    reach = np.maximum(np.maximum(distances, k_distance[neighbours]), REACH_FLOOR)
    return 1.0 / reach.mean(axis=1)


def fit_lof(X: np.ndarray, n_neighbors: int = DEFAULT_NEIGHBORS) -> LofModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if not 1 <= n_neighbors < n:
        raise InvalidArgumentError(f"n_neighbors must lie in [1, {n - 1}] for {n} reference points, got {n_neighbors}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("Reference features contain non-finite values")

    index = NearestNeighbors(n_neighbors=n_neighbors, algorithm="ball_tree").fit(X)
    # without X each point is excluded from its own neighbourhood
    distances, neighbours = index.kneighbors()
    k_distance = distances[:, -1]
    lrd = _reachability_density(distances, neighbours, k_distance)
    scores = lrd[neighbours].mean(axis=1) / lrd

    logger.debug(
        f"Fitted LOF on {n} points with k={n_neighbors}",
        extra={'n_reference': n, 'n_neighbors': n_neighbors}
    )
    return LofModel(
        X=X,
        n_neighbors=n_neighbors,
        index=index,
        k_distance=k_distance,
        lrd=lrd,
        training_scores=scores,
    )


def score_lof(model: LofModel, queries: np.ndarray) -> np.ndarray:
    """LOF of each query row; ~1 inside the reference data, >> 1 far from it."""
    single = np.ndim(queries) == 1
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[1] != model.width:
        raise InvalidArgumentError(f"Query has {queries.shape[1]} features, model was fitted on {model.width}")
    if not np.all(np.isfinite(queries)):
        raise InvalidArgumentError("Query features contain non-finite values")

    distances, neighbours = model.index.kneighbors(queries)
    lrd = _reachability_density(distances, neighbours, model.k_distance)
    scores = model.lrd[neighbours].mean(axis=1) / lrd
    return scores[0] if single else scores
