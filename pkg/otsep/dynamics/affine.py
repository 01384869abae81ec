"""
Affine dynamics x' = A x + b and the weighted least-squares identification step.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from otsep.core.exceptions import DimensionMismatchError, EmptyFitError
from otsep.core.measures import DiscreteMeasure
from otsep.dynamics.base import DynamicsModel

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    AFFINE = "affine"
    SHIFT = "shift"


@dataclass(frozen=True, eq=False)
class AffineModel(DynamicsModel):
    """One ensemble's parameters theta = (A, b); shift-only models fix A = I."""

    kind: ModelKind
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        kind = ModelKind(self.kind)
        b = np.array(self.b, dtype=float).reshape(-1)
        d = b.shape[0]
        if kind is ModelKind.SHIFT:
            A = np.eye(d)
        else:
            if self.A is None or np.size(self.A) != d * d:
                raise DimensionMismatchError(f"A must be {d}x{d} to match b of length {d}")
            A = np.array(self.A, dtype=float).reshape(d, d)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def shift(cls, b: Sequence[float]) -> "AffineModel":
        return cls(ModelKind.SHIFT, None, b)

    @classmethod
    def affine(cls, A, b) -> "AffineModel":
        return cls(ModelKind.AFFINE, A, b)

    @classmethod
    def identity(cls, d: int, kind: ModelKind = ModelKind.AFFINE) -> "AffineModel":
        return cls(kind, np.eye(d), np.zeros(d))

    @classmethod
    def random(cls, kind: ModelKind, d: int, rng: np.random.Generator, scale: float = 1.0) -> "AffineModel":
        """Entries of A and b i.i.d. N(0, scale^2); shift-only draws b only."""
        kind = ModelKind(kind)
        if kind is ModelKind.SHIFT:
            return cls.shift(scale * rng.standard_normal(d))
        A = scale * rng.standard_normal((d, d))
        b = scale * rng.standard_normal(d)
        return cls.affine(A, b)

    @classmethod
    def from_theta(cls, theta: np.ndarray, kind: ModelKind, d: int) -> "AffineModel":
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if ModelKind(kind) is ModelKind.SHIFT:
            return cls.shift(theta[:d])
        return cls.affine(theta[: d * d].reshape(d, d), theta[d * d: d * d + d])

    @classmethod
    def from_record(cls, record: dict) -> "AffineModel":
        kind = ModelKind(record["kind"])
        b = np.asarray(record["b"], dtype=float)
        A = None if kind is ModelKind.SHIFT else np.asarray(record["A"], dtype=float).reshape(b.size, b.size)
        return cls(kind, A, b)

    @property
    def d(self) -> int:
        return self.b.shape[0]

    @property
    def theta(self) -> np.ndarray:
        if self.kind is ModelKind.SHIFT:
            return self.b.copy()
        return np.concatenate([self.A.ravel(), self.b])

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        self.check_dimension(points.shape[-1])
        if self.kind is ModelKind.SHIFT:
            return points + self.b
        return points @ self.A.T + self.b

    def to_record(self) -> dict:
        return {
            "kind": self.kind.value,
            "A": [float(v) for v in self.A.ravel()],
            "b": [float(v) for v in self.b],
        }

    def __repr__(self) -> str:
        return f"AffineModel(kind={self.kind.value}, A={self.A.tolist()}, b={self.b.tolist()})"


@dataclass(frozen=True, eq=False)
class WeightedPairs:
    """Triples (x_m, y_m, w_m) stored as arrays x (m, d), y (m, d), w (m,)."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if x.shape != y.shape or x.shape[0] != w.shape[0]:
            raise DimensionMismatchError(f"pair shapes disagree: x {x.shape}, y {y.shape}, w {w.shape}")
        if np.any(w < 0):
            raise ValueError("pair weights must be nonnegative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)

    @property
    def total_weight(self) -> float:
        return float(self.w.sum())

    @classmethod
    def concatenate(cls, parts: Iterable["WeightedPairs"]) -> "WeightedPairs":
        parts = list(parts)
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.w for p in parts]),
        )

    @classmethod
    def from_plan(cls, plan: np.ndarray, source: DiscreteMeasure, target: DiscreteMeasure) -> "WeightedPairs":
        """Pairs (x_i, y_j) weighted by the positive entries of a transport plan."""
        rows, cols = np.nonzero(plan > 0)
        return cls(source.points[rows], target.points[cols], plan[rows, cols])

    @classmethod
    def from_trajectories(cls, trajectories: np.ndarray) -> "WeightedPairs":
        """Unit-weight consecutive pairs of an (n, T, d) trajectory array."""
        trajectories = np.asarray(trajectories, dtype=float)
        d = trajectories.shape[-1]
        x = trajectories[:, :-1, :].reshape(-1, d)
        y = trajectories[:, 1:, :].reshape(-1, d)
        return cls(x, y, np.ones(x.shape[0]))


def apply(model: AffineModel, x: Union[np.ndarray, Sequence[float]]) -> np.ndarray:
    """A x + b for a single point."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.d:
        raise DimensionMismatchError(f"point has dimension {x.shape[0]}, model has dimension {model.d}")
    return model.apply_points(x[None, :])[0]


def cost_matrix(model: AffineModel, source: DiscreteMeasure, target: DiscreteMeasure) -> np.ndarray:
    """Entry (i, j) = ||A x_i + b - y_j||^2."""
    return model.cost_matrix(source, target)


def weighted_objective(model: AffineModel, pairs: WeightedPairs) -> float:
    residual = model.apply_points(pairs.x) - pairs.y
    return float(np.sum(pairs.w * np.sum(residual * residual, axis=1)))


def fit_weighted(pairs: WeightedPairs, kind: Union[ModelKind, str]) -> AffineModel:
    """
    Minimize sum w * ||A x + b - y||^2 over (A, b), or over b with A = I.

    Regressors are augmented as (x, 1) so A and b come out of one linear
    system. Rank-deficient problems return the minimum-norm solution.
    """
    kind = ModelKind(kind)
    total = pairs.total_weight
    if not total > 0:
        raise EmptyFitError("cannot fit dynamics to pairs with zero total weight")
    w = pairs.w / total

    if kind is ModelKind.SHIFT:
        b = w @ (pairs.y - pairs.x)
        return AffineModel.shift(b)

    d = pairs.x.shape[1]
    keep = w > 0
    sqrt_w = np.sqrt(w[keep])[:, None]
    Z = np.hstack([pairs.x[keep], np.ones((int(keep.sum()), 1))])
    # lstsq returns the minimum-norm minimizer when Z is rank deficient
    coef, _, rank, _ = np.linalg.lstsq(sqrt_w * Z, sqrt_w * pairs.y[keep], rcond=None)
    if rank < d + 1:
        logger.debug(f"Rank-deficient regressors (rank {rank} < {d + 1}), using minimum-norm solution")
    return AffineModel.affine(coef[:d].T, coef[d])


def models_to_records(models: Sequence[AffineModel]) -> List[dict]:
    return [m.to_record() for m in models]


def models_from_records(records: Sequence[dict]) -> List[AffineModel]:
    return [AffineModel.from_record(r) for r in records]
