import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from otsep.core.config import SolverConfig
from otsep.core.exceptions import DatasetError, DimensionMismatchError
from otsep.core.measures import MASS_BALANCE_RTOL, DiscreteMeasure
from otsep.transport.lp import northwest_corner
from otsep.transport.simplex import RevisedSimplex, SimplexBasis

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TransportPlan:
    plan: np.ndarray
    objective: float


def transport_constraints(n1: int, n2: int) -> sp.csc_matrix:
    """Row-sum then column-sum constraints of an n1 x n2 plan flattened row-major."""
    ii, jj = np.divmod(np.arange(n1 * n2), n2)
    rows = np.concatenate([ii, n1 + jj])
    cols = np.concatenate([np.arange(n1 * n2)] * 2)
    return sp.csc_matrix((np.ones(2 * n1 * n2), (rows, cols)), shape=(n1 + n2, n1 * n2))


def northwest_basis(mu: DiscreteMeasure, nu: DiscreteMeasure) -> SimplexBasis:
    """Staircase starting basis over position-sorted supports; the last column sum is dropped."""
    order_mu = np.lexsort(mu.points.T[::-1])
    order_nu = np.lexsort(nu.points.T[::-1])
    ii, jj = northwest_corner(mu.masses[order_mu], nu.masses[order_nu])
    active = np.ones(mu.n + nu.n, dtype=bool)
    active[-1] = False
    return SimplexBasis(active, order_mu[ii] * nu.n + order_nu[jj])


def solve_classic_ot(
    cost: np.ndarray,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    config: Optional[SolverConfig] = None,
) -> TransportPlan:
    """Optimal plan between mu and nu for the ground cost matrix `cost`."""
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (mu.n, nu.n):
        raise DimensionMismatchError(f"cost has shape {cost.shape}, expected {(mu.n, nu.n)}")
    a, b = mu.total_mass, nu.total_mass
    if abs(a - b) > MASS_BALANCE_RTOL * max(abs(a), abs(b)):
        raise DatasetError(f"mass imbalance: source carries {a!r}, target carries {b!r}")

    E = transport_constraints(mu.n, nu.n)
    f = np.concatenate([mu.masses, nu.masses])
    result = RevisedSimplex(config).solve(cost.ravel(), E, f, warm_start=northwest_basis(mu, nu))
    plan = result.x.reshape(mu.n, nu.n)
    logger.debug(f"Classic OT {mu.n}x{nu.n}: objective={result.objective:.6g} after {result.iterations} pivots")
    return TransportPlan(plan=plan, objective=result.objective)
