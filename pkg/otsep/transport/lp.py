"""
The coupled optimal-transport linear program.

Variables are all plan entries m_k^(t)(i, j) followed by all marginal
entries mu_k^(t)(i). Constraint rows come in three families:

    (i)   sum_j m_k^(t)(i, j) - mu_k^(t)(i)   = 0    per (k, t, i), t < T
    (ii)  sum_i m_k^(t)(i, j) - mu_k^(t+1)(j) = 0    per (k, t, j), t < T
    (iii) sum_k mu_k^(t)(i)                   = mu^(t)(i)   per (t, i)

The system has dependent rows by construction (total mass is counted at
both ends of every plan); the solver drops them during phase 1.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from otsep.core.exceptions import DimensionMismatchError
from otsep.core.measures import DiscreteMeasure, ObservationSequence

if TYPE_CHECKING:
    from otsep.dynamics.base import DynamicsModel
    from otsep.transport.simplex import SimplexBasis

logger = logging.getLogger(__name__)

# Costs indexed as costs[k][t], each of shape (n_t, n_{t+1})
CostMatrices = Sequence[Sequence[np.ndarray]]


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """min c.x subject to E x = f, x >= 0, with the variable layout of the coupled problem."""

    c: np.ndarray
    E: sp.csc_matrix
    f: np.ndarray
    K: int
    sizes: Tuple[int, ...]
    plan_offsets: np.ndarray  # (K, T-1)
    marginal_offsets: np.ndarray  # (K, T)
    # per time, support indices sorted by position; used to order crash couplings
    orders: Optional[Tuple[np.ndarray, ...]] = field(default=None, repr=False)

    @property
    def T(self) -> int:
        return len(self.sizes)

    @property
    def n_vars(self) -> int:
        return self.E.shape[1]

    @property
    def n_rows(self) -> int:
        return self.E.shape[0]

    @property
    def n_plan_vars(self) -> int:
        return self.K * sum(self.sizes[t] * self.sizes[t + 1] for t in range(self.T - 1))

    @property
    def n_marginal_vars(self) -> int:
        return self.K * sum(self.sizes)

    def plan_slice(self, k: int, t: int) -> slice:
        start = int(self.plan_offsets[k, t])
        return slice(start, start + self.sizes[t] * self.sizes[t + 1])

    def marginal_slice(self, k: int, t: int) -> slice:
        start = int(self.marginal_offsets[k, t])
        return slice(start, start + self.sizes[t])

    def row_label(self, row: int) -> str:
        """Human-readable name of a constraint row, 1-based t as in dataset files."""
        per_k_rows = [self.sizes[t] + self.sizes[t + 1] for t in range(self.T - 1)]
        coupling_rows = self.K * sum(per_k_rows)
        if row >= coupling_rows:
            row -= coupling_rows
            for t, n in enumerate(self.sizes):
                if row < n:
                    return f"(iii) t={t + 1} i={row}"
                row -= n
            raise IndexError(row)
        for k in range(self.K):
            for t, n_rows in enumerate(per_k_rows):
                if row < n_rows:
                    if row < self.sizes[t]:
                        return f"(i) k={k} t={t + 1} i={row}"
                    return f"(ii) k={k} t={t + 1} j={row - self.sizes[t]}"
                row -= n_rows
        raise IndexError(row)

    def with_costs(self, costs: CostMatrices) -> "LinearProgram":
        """Same constraints, new plan costs; keeps warm-start bases valid."""
        c = np.zeros(self.n_vars)
        for k in range(self.K):
            for t in range(self.T - 1):
                block = np.asarray(costs[k][t], dtype=float)
                if block.shape != (self.sizes[t], self.sizes[t + 1]):
                    raise DimensionMismatchError(
                        f"cost[{k}][{t}] has shape {block.shape}, expected {(self.sizes[t], self.sizes[t + 1])}"
                    )
                c[self.plan_slice(k, t)] = block.ravel()
        return replace(self, c=c)

    def crash_basis(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        A primal feasible starting basis as (active_rows, basic columns).

        Ensemble 0 carries all mass along north-west corner couplings; every
        other ensemble gets the same staircase cells at zero plus one marginal
        per plan. The last column-sum row of each ensemble-0 plan is the
        dependent one and is left out.
        """
        sizes, T = self.sizes, self.T
        per_k_rows = [sizes[t] + sizes[t + 1] for t in range(T - 1)]
        bounds = self.K * sum(per_k_rows) + np.concatenate([[0], np.cumsum(sizes)])
        masses = [self.f[bounds[t]:bounds[t + 1]] for t in range(T)]
        orders = self.orders or tuple(np.arange(n) for n in sizes)

        active = np.ones(self.n_rows, dtype=bool)
        basic = [self.marginal_offsets[0, t] + np.arange(sizes[t]) for t in range(T)]
        row = 0
        for t in range(T - 1):
            ii, jj = northwest_corner(masses[t][orders[t]], masses[t + 1][orders[t + 1]])
            cells = orders[t][ii] * sizes[t + 1] + orders[t + 1][jj]
            for k in range(self.K):
                basic.append(self.plan_offsets[k, t] + cells)
                if k > 0:
                    basic.append(np.array([self.marginal_offsets[k, t] + orders[t][0]]))
            active[row + per_k_rows[t] - 1] = False
            row += per_k_rows[t]
        return active, np.concatenate(basic).astype(np.int64)

    def unpack(self, x: np.ndarray, objective: float, basis: Optional["SimplexBasis"] = None) -> "CoupledPlanSet":
        plans = [
            [x[self.plan_slice(k, t)].reshape(self.sizes[t], self.sizes[t + 1]).copy() for t in range(self.T - 1)]
            for k in range(self.K)
        ]
        marginals = [[x[self.marginal_slice(k, t)].copy() for t in range(self.T)] for k in range(self.K)]
        return CoupledPlanSet(plans=plans, marginals=marginals, objective=float(objective), basis=basis)


@dataclass(frozen=True, eq=False)
class CoupledPlanSet:
    """Transport plans plans[k][t] and ensemble marginals marginals[k][t]."""

    plans: List[List[np.ndarray]]
    marginals: List[List[np.ndarray]]
    objective: float
    basis: Optional["SimplexBasis"] = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return len(self.marginals)

    @property
    def T(self) -> int:
        return len(self.marginals[0])

    def ensemble_mass(self, k: int) -> float:
        return float(sum(plan.sum() for plan in self.plans[k]))

    def max_residual(self, seq: ObservationSequence) -> float:
        """Largest violation of the row, column and superposition constraints."""
        worst = 0.0
        for k in range(self.K):
            for t in range(self.T - 1):
                plan = self.plans[k][t]
                worst = max(worst, float(np.max(np.abs(plan.sum(axis=1) - self.marginals[k][t]))))
                worst = max(worst, float(np.max(np.abs(plan.sum(axis=0) - self.marginals[k][t + 1]))))
        for t, measure in enumerate(seq.measures):
            total = sum(self.marginals[k][t] for k in range(self.K))
            worst = max(worst, float(np.max(np.abs(total - measure.masses))))
        return worst

    def scaled(self, alpha: float) -> "CoupledPlanSet":
        return CoupledPlanSet(
            plans=[[p * alpha for p in per_k] for per_k in self.plans],
            marginals=[[m * alpha for m in per_k] for per_k in self.marginals],
            objective=self.objective * alpha,
        )


def northwest_corner(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Cells (i, j) of the north-west corner rule for masses a -> b.

    Always exactly len(a) + len(b) - 1 cells forming a staircase, i.e. a
    spanning tree of the bipartite transport graph; degenerate steps add
    zero cells instead of skipping.
    """
    n1, n2 = len(a), len(b)
    last = n1 + n2 - 2
    ii = np.empty(last + 1, dtype=np.int64)
    jj = np.empty(last + 1, dtype=np.int64)
    i = j = 0
    left, right = float(a[0]), float(b[0])
    for s in range(last + 1):
        ii[s], jj[s] = i, j
        if s == last:
            break
        amount = min(left, right)
        left -= amount
        right -= amount
        if i < n1 - 1 and (left <= right or j == n2 - 1):
            i += 1
            left = float(a[i])
        else:
            j += 1
            right = float(b[j])
    return ii, jj


def build_costs(models: Sequence["DynamicsModel"], seq: ObservationSequence) -> List[List[np.ndarray]]:
    """costs[k][t] = cost matrix of model k from mu^(t) to mu^(t+1)."""
    return [
        [model.cost_matrix(seq.measures[t], seq.measures[t + 1]) for t in range(seq.T - 1)]
        for model in models
    ]


def build_coupled_lp(seq: ObservationSequence, costs: CostMatrices) -> LinearProgram:
    K = len(costs)
    sizes = tuple(seq.sizes)
    T = len(sizes)
    if K < 1:
        raise DimensionMismatchError("need cost matrices for at least one ensemble")
    for k in range(K):
        if len(costs[k]) != T - 1:
            raise DimensionMismatchError(f"ensemble {k}: expected {T - 1} cost matrices, got {len(costs[k])}")
        for t in range(T - 1):
            shape = np.shape(costs[k][t])
            if shape != (sizes[t], sizes[t + 1]):
                raise DimensionMismatchError(
                    f"cost[{k}][{t}] has shape {shape}, expected {(sizes[t], sizes[t + 1])}"
                )

    block = [sizes[t] * sizes[t + 1] for t in range(T - 1)]
    plan_offsets = np.zeros((K, T - 1), dtype=np.int64)
    offset = 0
    for k in range(K):
        for t in range(T - 1):
            plan_offsets[k, t] = offset
            offset += block[t]
    n_plan = offset
    marginal_offsets = np.zeros((K, T), dtype=np.int64)
    for k in range(K):
        for t in range(T):
            marginal_offsets[k, t] = offset
            offset += sizes[t]
    n_vars = offset

    c = np.zeros(n_vars)
    rows, cols, vals = [], [], []
    row = 0
    for k in range(K):
        for t in range(T - 1):
            n1, n2 = sizes[t], sizes[t + 1]
            start = plan_offsets[k, t]
            c[start:start + n1 * n2] = np.asarray(costs[k][t], dtype=float).ravel()
            ii, jj = np.divmod(np.arange(n1 * n2), n2)
            var = start + np.arange(n1 * n2)
            # (i) row sums against mu_k^(t)
            rows += [row + ii, row + np.arange(n1)]
            cols += [var, marginal_offsets[k, t] + np.arange(n1)]
            vals += [np.ones(n1 * n2), -np.ones(n1)]
            row += n1
            # (ii) column sums against mu_k^(t+1)
            rows += [row + jj, row + np.arange(n2)]
            cols += [var, marginal_offsets[k, t + 1] + np.arange(n2)]
            vals += [np.ones(n1 * n2), -np.ones(n2)]
            row += n2
    f_parts = [np.zeros(row)]
    # (iii) superposition of ensemble marginals
    for t in range(T):
        n = sizes[t]
        for k in range(K):
            rows.append(row + np.arange(n))
            cols.append(marginal_offsets[k, t] + np.arange(n))
            vals.append(np.ones(n))
        f_parts.append(np.asarray(seq.measures[t].masses, dtype=float))
        row += n

    E = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(row, n_vars),
    )
    f = np.concatenate(f_parts)
    orders = tuple(np.lexsort(measure.points.T[::-1]) for measure in seq.measures)
    lp = LinearProgram(c, E, f, K, sizes, plan_offsets, marginal_offsets, orders)
    logger.debug(
        f"Built coupled LP: K={K}, T={T}, {n_plan} plan vars, {n_vars - n_plan} marginal vars, {row} rows"
    )
    return lp


def proportional_split(lp: LinearProgram, seq: ObservationSequence, shares: Optional[np.ndarray] = None) -> np.ndarray:
    """
    A feasible point: every observed mass split across ensembles by `shares`
    and transported with the independent (product) coupling.
    """
    shares = np.full(lp.K, 1.0 / lp.K) if shares is None else np.asarray(shares, dtype=float)
    total = seq.total_mass
    x = np.zeros(lp.n_vars)
    for k in range(lp.K):
        for t in range(lp.T):
            x[lp.marginal_slice(k, t)] = shares[k] * seq.measures[t].masses
        for t in range(lp.T - 1):
            plan = shares[k] * np.outer(seq.measures[t].masses, seq.measures[t + 1].masses) / total
            x[lp.plan_slice(k, t)] = plan.ravel()
    return x


def dump_lp(lp: LinearProgram, path: Union[str, Path]) -> None:
    """Plain-text listing of c, E (as triplets) and f, for debugging."""
    E = lp.E.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# coupled OT LP: K={lp.K} sizes={list(lp.sizes)}\n")
        fh.write(f"rows {lp.n_rows} cols {lp.n_vars} nnz {E.nnz}\n")
        fh.write("c\n")
        for j, value in enumerate(lp.c):
            fh.write(f"{j} {value!r}\n")
        fh.write("E\n")
        order = np.lexsort((E.col, E.row))
        for r, col, value in zip(E.row[order], E.col[order], E.data[order]):
            fh.write(f"{r} {col} {value!r}\n")
        fh.write("f\n")
        for r, value in enumerate(lp.f):
            fh.write(f"{r} {value!r}\n")
    logger.info(f"Dumped LP with {lp.n_rows} rows and {lp.n_vars} columns to {path}")


def interpolate_plan(plan: np.ndarray, source: DiscreteMeasure, target: DiscreteMeasure, s: float) -> DiscreteMeasure:
    """Displacement interpolation: mass w of entry (i, j) sits at (1 - s) x_i + s y_j."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter must lie in [0, 1], got {s}")
    if plan.shape != (source.n, target.n):
        raise DimensionMismatchError(f"plan shape {plan.shape} does not match supports ({source.n}, {target.n})")
    rows, cols = np.nonzero(plan > 0)
    points = (1.0 - s) * source.points[rows] + s * target.points[cols]
    return DiscreteMeasure(points, plan[rows, cols])
