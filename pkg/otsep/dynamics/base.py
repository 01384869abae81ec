from abc import ABC, abstractmethod

import numpy as np
from scipy.spatial.distance import cdist

from otsep.core.exceptions import DimensionMismatchError
from otsep.core.measures import DiscreteMeasure


class DynamicsModel(ABC):
    """Abstract base class for parametric state-transition maps x -> Phi_theta(x)."""

    @property
    @abstractmethod
    def d(self) -> int:
        """State dimension."""
        pass

    @abstractmethod
    def apply_points(self, points: np.ndarray) -> np.ndarray:
        """Map an (n, d) array of states one time step forward."""
        pass

    @property
    @abstractmethod
    def theta(self) -> np.ndarray:
        """Free parameters flattened into a vector."""
        pass

    @abstractmethod
    def to_record(self) -> dict:
        """Serializable record of the model."""
        pass

    def check_dimension(self, d: int, what: str = "point") -> None:
        if d != self.d:
            raise DimensionMismatchError(f"{what} has dimension {d}, model has dimension {self.d}")

    def cost_matrix(self, source: DiscreteMeasure, target: DiscreteMeasure) -> np.ndarray:
        """Ground cost c(i, j) = ||Phi(x_i) - y_j||^2 between the supports."""
        self.check_dimension(source.d, "source measure")
        self.check_dimension(target.d, "target measure")
        return cdist(self.apply_points(source.points), target.points, "sqeuclidean")
