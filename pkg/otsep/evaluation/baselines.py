"""
Baselines with access to particle identities.

The oracle knows every trajectory and its ensemble; the semi-oracle knows
the trajectories only and groups them by clustering per-trajectory
parameter estimates.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from otsep.core.exceptions import ConfigurationError, DimensionMismatchError
from otsep.dynamics.affine import AffineModel, ModelKind, WeightedPairs, fit_weighted
from otsep.evaluation.kmeans import kmeans

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    """`trajectories` is (n, T, d); `labels[n]` is the ensemble of trajectory n."""

    trajectories: np.ndarray
    labels: Optional[np.ndarray] = None
    true_models: Optional[Tuple[AffineModel, ...]] = None

    def __post_init__(self):
        trajectories = np.asarray(self.trajectories, dtype=float)
        if trajectories.ndim == 2:
            trajectories = trajectories[:, :, None]
        if trajectories.ndim != 3:
            raise DimensionMismatchError(f"trajectories must be (n, T, d), got shape {trajectories.shape}")
        object.__setattr__(self, "trajectories", trajectories)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int).reshape(-1)
            if labels.shape[0] != trajectories.shape[0]:
                raise DimensionMismatchError(f"{labels.shape[0]} labels for {trajectories.shape[0]} trajectories")
            object.__setattr__(self, "labels", labels)
        if self.true_models is not None:
            object.__setattr__(self, "true_models", tuple(self.true_models))

    @property
    def n(self) -> int:
        return self.trajectories.shape[0]

    @property
    def T(self) -> int:
        return self.trajectories.shape[1]

    @property
    def d(self) -> int:
        return self.trajectories.shape[2]

    @property
    def K(self) -> Optional[int]:
        if self.true_models is not None:
            return len(self.true_models)
        if self.labels is not None:
            return int(self.labels.max()) + 1
        return None


def _pooled_fit(trajectories: np.ndarray, kind: ModelKind) -> AffineModel:
    return fit_weighted(WeightedPairs.from_trajectories(trajectories), kind)


def oracle_fit(trajs: TrajectorySet, kind: Union[ModelKind, str] = ModelKind.AFFINE) -> List[AffineModel]:
    """Pooled least squares per ensemble over all consecutive pairs of its member trajectories."""
    if trajs.labels is None:
        raise ConfigurationError("oracle fit needs the true ensemble labels of the trajectories")
    kind = ModelKind(kind)
    return [_pooled_fit(trajs.trajectories[trajs.labels == k], kind) for k in range(trajs.K)]


def per_trajectory_parameters(trajs: TrajectorySet, kind: Union[ModelKind, str] = ModelKind.AFFINE) -> np.ndarray:
    """One least-squares theta per trajectory, stacked as rows."""
    kind = ModelKind(kind)
    return np.vstack([_pooled_fit(trajs.trajectories[i:i + 1], kind).theta for i in range(trajs.n)])


def semi_oracle_fit(
    trajs: TrajectorySet,
    K: int,
    kind: Union[ModelKind, str] = ModelKind.AFFINE,
    kmeans_restarts: int = 100,
    seed: int = 0,
    refit: bool = True,
) -> Tuple[List[AffineModel], np.ndarray]:
    """
    Cluster per-trajectory estimates into K groups and fit each group.

    With `refit` the models are re-estimated by pooled least squares over
    each cluster's trajectories; otherwise the cluster centroids are
    returned as models. Labels are per trajectory.
    """
    kind = ModelKind(kind)
    if K > trajs.n:
        raise ConfigurationError(f"K={K} exceeds the number of trajectories ({trajs.n})")

    thetas = per_trajectory_parameters(trajs, kind)
    clustering = kmeans(thetas, K, restarts=kmeans_restarts, seed=seed)
    labels = clustering.assignment
    logger.debug(f"Semi-oracle clustering objective {clustering.objective:.6g} (restart {clustering.restart})")

    if not refit:
        return [AffineModel.from_theta(c, kind, trajs.d) for c in clustering.centroids], labels
    return [_pooled_fit(trajs.trajectories[labels == k], kind) for k in range(K)], labels


def labels_by_time(trajectory_labels: Sequence[int], particle_ids: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Spread per-trajectory labels onto the (t, point) entries of a dataset via its particle ids."""
    trajectory_labels = np.asarray(trajectory_labels, dtype=int)
    return [trajectory_labels[np.asarray(ids, dtype=int)] for ids in particle_ids]
