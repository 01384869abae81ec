"""
Gaussian-mixture pairs whose modes trade places between two snapshots.

mu puts weight w_k on mode k at m_k; nu puts the same mode (weight and
width) at m_{pi(k)}. Classical transport between the two splits modes;
separating them into K ensembles recovers the shifts m_{pi(k)} - m_k with
zero cost.
"""
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, model_validator
from scipy.stats import norm

from otsep.core.config import GmmSettings, settings
from otsep.core.exceptions import ConfigurationError
from otsep.core.measures import DiscreteMeasure, ObservationSequence
from otsep.dynamics.affine import AffineModel

logger = logging.getLogger(__name__)

GRID_MASS_RTOL = 1e-6

Grid = Tuple[float, float, int]


class GmmConfig(GmmSettings):
    @model_validator(mode="after")
    def check_values(self) -> "GmmConfig":
        lo, hi, m = self.grid
        if int(m) < 2:
            raise ValueError(f"grid needs at least 2 points, got {m}")
        if not lo < hi:
            raise ValueError(f"grid bounds must satisfy lo < hi, got ({lo}, {hi})")
        if self.p <= 0 or self.p_prime <= 0:
            raise ValueError("mixture weights must be positive")
        if self.sigma <= 0 or self.sigma_prime <= 0:
            raise ValueError("standard deviations must be positive")
        return self

    @classmethod
    def from_settings(cls, **overrides) -> "GmmConfig":
        values = settings.gmm.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def expected_shifts(self) -> List[float]:
        return [self.a_prime - self.a, self.a - self.a_prime]


def grid_points(grid: Grid) -> Tuple[np.ndarray, float]:
    lo, hi, m = grid
    x = np.linspace(lo, hi, int(m))
    return x, (hi - lo) / (int(m) - 1)


def discretize_mixture(
    weights: Sequence[float], means: Sequence[float], sigmas: Sequence[float], grid: Grid
) -> np.ndarray:
    """Mixture density times cell width at every grid point."""
    x, width = grid_points(grid)
    lo, hi, _ = grid
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)

    captured = np.sum(weights * (norm.cdf(hi, means, sigmas) - norm.cdf(lo, means, sigmas))) / weights.sum()
    if captured < 1.0 - GRID_MASS_RTOL:
        logger.warning(f"Grid [{lo}, {hi}] carries only {captured:.8f} of the mixture mass")
        raise ConfigurationError(
            f"grid [{lo}, {hi}] is too narrow: it carries {captured:.8f} < {1.0 - GRID_MASS_RTOL} of the mass"
        )
    density = np.sum(weights[:, None] * norm.pdf(x[None, :], means[:, None], sigmas[:, None]), axis=0)
    return density * width


def _balance(mu: np.ndarray, nu: np.ndarray, total: float) -> Tuple[np.ndarray, np.ndarray]:
    mu = mu * (total / mu.sum())
    nu = nu * (total / nu.sum())
    # put the rounding residue on nu's largest entry
    nu[np.argmax(nu)] += mu.sum() - nu.sum()
    return mu, nu


def gmm_multimode(
    weights: Sequence[float],
    means: Sequence[float],
    sigmas: Sequence[float],
    permutation: Sequence[int],
    grid: Grid,
) -> ObservationSequence:
    """mu = sum_k w_k N(m_k, s_k), nu = sum_k w_k N(m_{pi(k)}, s_k) on a 1-D grid."""
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    K = weights.shape[0]
    if means.shape[0] != K or sigmas.shape[0] != K:
        raise ConfigurationError(f"{K} weights, {means.shape[0]} means and {sigmas.shape[0]} widths")
    if sorted(int(p) for p in permutation) != list(range(K)):
        raise ConfigurationError(f"{list(permutation)} is not a permutation of 0..{K - 1}")
    if np.any(weights <= 0) or np.any(sigmas <= 0):
        raise ConfigurationError("mixture weights and widths must be positive")
    lo, hi, m = grid
    if int(m) < 2 or not lo < hi:
        raise ConfigurationError(f"degenerate grid {grid}")

    permutation = np.asarray(permutation, dtype=int)
    mu = discretize_mixture(weights, means, sigmas, grid)
    nu = discretize_mixture(weights, means[permutation], sigmas, grid)
    total = float(weights.sum())
    logger.debug(f"Discretized masses before renormalization: {mu.sum():.10f}, {nu.sum():.10f} (target {total})")
    mu, nu = _balance(mu, nu, total)

    x, _ = grid_points(grid)
    shifts = means[permutation] - means
    return ObservationSequence(
        (DiscreteMeasure(x.reshape(-1, 1), mu), DiscreteMeasure(x.reshape(-1, 1), nu)),
        true_models=tuple(AffineModel.shift([s]) for s in shifts),
    )


def gmm_example(cfg: Optional[GmmConfig] = None) -> ObservationSequence:
    """Two modes swapping places: mu = p N(a, sigma) + p' N(a', sigma'), nu = p' N(a, sigma') + p N(a', sigma)."""
    cfg = cfg or GmmConfig.from_settings()
    return gmm_multimode(
        weights=[cfg.p, cfg.p_prime],
        means=[cfg.a, cfg.a_prime],
        sigmas=[cfg.sigma, cfg.sigma_prime],
        permutation=[1, 0],
        grid=cfg.grid,
    )
