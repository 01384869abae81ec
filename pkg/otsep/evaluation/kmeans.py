import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.spatial.distance import cdist

from otsep.core.exceptions import ConfigurationError
from otsep.utils.rng import derive_rng

logger = logging.getLogger(__name__)

MAX_LLOYD_ITERATIONS = 300


@dataclass(frozen=True, eq=False)
class KMeansResult:
    assignment: np.ndarray
    centroids: np.ndarray
    objective: float
    restart: int = 0
    trace: List[float] = field(default_factory=list)
    restart_objectives: List[float] = field(default_factory=list)


def _lloyd(points: np.ndarray, K: int, rng: np.random.Generator):
    n = points.shape[0]
    centroids = points[rng.choice(n, size=K, replace=False)].copy()
    assignment = None
    trace = []
    for _ in range(MAX_LLOYD_ITERATIONS):
        dists = cdist(points, centroids, "sqeuclidean")
        new_assignment = np.argmin(dists, axis=1)
        trace.append(float(dists[np.arange(n), new_assignment].sum()))
        if assignment is not None and np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for k in range(K):
            members = points[assignment == k]
            if members.shape[0]:
                centroids[k] = members.mean(axis=0)
        empty = [k for k in range(K) if not np.any(assignment == k)]
        for k in empty:
            # re-seed from the point farthest from its own centroid
            own = np.sum((points - centroids[assignment]) ** 2, axis=1)
            far = int(np.argmax(own))
            centroids[k] = points[far]
            assignment = assignment.copy()
            assignment[far] = k
    return assignment, centroids, trace


def kmeans(points: np.ndarray, K: int, restarts: int = 100, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm from `restarts` uniform draws of data points; best within-cluster sum of squares."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    if K < 1 or K > n:
        raise ConfigurationError(f"cannot form {K} clusters from {n} points")
    if restarts < 1:
        raise ConfigurationError("k-means needs at least one restart")

    best = None
    objectives = []
    for r in range(restarts):
        assignment, centroids, trace = _lloyd(points, K, derive_rng(seed, r))
        objective = trace[-1]
        objectives.append(objective)
        if best is None or objective < best.objective:
            best = KMeansResult(assignment, centroids, objective, restart=r, trace=trace)
    logger.debug(f"k-means: best restart {best.restart} of {restarts}, objective {best.objective:.6g}")
    return KMeansResult(
        assignment=best.assignment,
        centroids=best.centroids,
        objective=best.objective,
        restart=best.restart,
        trace=best.trace,
        restart_objectives=objectives,
    )
