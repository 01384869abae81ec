import itertools
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from otsep.core.exceptions import ConfigurationError, DimensionMismatchError
from otsep.dynamics.affine import AffineModel

logger = logging.getLogger(__name__)

MAX_MATCH_K = 8


class EvalReport(BaseModel):
    """
    `permutation[k]` is the estimated ensemble matched to true ensemble k.
    """

    permutation: Tuple[int, ...]
    param_sq_error: float = Field(ge=0)
    classification_accuracy: Optional[float] = Field(None, ge=0, le=1)

    @field_validator("permutation")
    @classmethod
    def _is_bijection(cls, v):
        if sorted(v) != list(range(len(v))):
            raise ValueError(f"{v} is not a permutation of 0..{len(v) - 1}")
        return tuple(v)


def match_permutation(estimated: Sequence[AffineModel], truth: Sequence[AffineModel]) -> EvalReport:
    """Exhaustive search for the alignment minimizing the summed squared parameter error."""
    K = len(truth)
    if len(estimated) != K:
        raise ConfigurationError(f"cannot match {len(estimated)} estimated models to {K} true models")
    if K > MAX_MATCH_K:
        raise ConfigurationError(f"permutation matching is limited to K <= {MAX_MATCH_K}, got {K}")
    for est, ref in zip(estimated, truth):
        if est.d != ref.d or est.kind is not ref.kind:
            raise ConfigurationError(
                f"model mismatch: estimated {est.kind.value} in d={est.d}, true {ref.kind.value} in d={ref.d}"
            )

    # errors[k, e] = ||theta_hat_e - theta_k||^2
    true_thetas = np.vstack([m.theta for m in truth])
    est_thetas = np.vstack([m.theta for m in estimated])
    errors = np.sum((true_thetas[:, None, :] - est_thetas[None, :, :]) ** 2, axis=2)

    best_perm, best_error = None, np.inf
    for perm in itertools.permutations(range(K)):
        error = float(errors[np.arange(K), perm].sum())
        if error < best_error:
            best_perm, best_error = perm, error
    return EvalReport(permutation=best_perm, param_sq_error=best_error)


def _flatten(labels) -> np.ndarray:
    if isinstance(labels, np.ndarray):
        return labels.astype(int).reshape(-1)
    parts = [np.asarray(part, dtype=int).reshape(-1) for part in labels]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=int)


def classification_accuracy(predicted, true, permutation: Sequence[int]) -> float:
    """
    Fraction of (t, point) entries whose predicted ensemble, relabeled
    through the matching, equals the true ensemble.
    """
    predicted = _flatten(predicted)
    true = _flatten(true)
    if predicted.shape != true.shape:
        raise DimensionMismatchError(f"{predicted.shape[0]} predicted labels against {true.shape[0]} true labels")
    if predicted.size == 0:
        raise DimensionMismatchError("no labels to compare")

    permutation = np.asarray(permutation, dtype=int)
    to_true = np.empty_like(permutation)
    to_true[permutation] = np.arange(permutation.shape[0])
    if np.any(predicted < 0) or np.any(predicted >= permutation.shape[0]):
        raise ConfigurationError("predicted label outside the matched ensembles")
    return float(np.mean(to_true[predicted] == true))


def evaluate(
    estimated: Sequence[AffineModel],
    truth: Sequence[AffineModel],
    predicted_labels=None,
    true_labels=None,
) -> EvalReport:
    report = match_permutation(estimated, truth)
    if predicted_labels is not None and true_labels is not None:
        report.classification_accuracy = classification_accuracy(predicted_labels, true_labels, report.permutation)
    logger.debug(
        f"Evaluation: permutation={report.permutation}, error={report.param_sq_error:.6g}, "
        f"accuracy={report.classification_accuracy}"
    )
    return report
