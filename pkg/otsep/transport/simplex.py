"""
Two-phase primal revised simplex for min c.x s.t. E x = f, x >= 0 with sparse E.

The basis inverse is kept as a sparse LU factorization (SuperLU) times a
product of eta matrices, refactorized every `refactor_interval` pivots.
Pricing is Devex (or Dantzig's rule); after a stall of
`bland_stall_factor * rows` pivots without objective decrease the solver
switches to Bland's rule for the rest of the phase, which cannot cycle.

The transport constraints are massively degenerate, so the right-hand side
is shifted by E @ delta for a small random delta > 0 first. The shifted
problem is feasible for the same bases and has no degenerate vertices. Once
it is optimal the shift is removed, remaining primal infeasibilities are
repaired with dual simplex pivots and a last pricing pass on the exact data
confirms optimality.

Phase 1 starts from an all-artificial basis unless a warm-start basis is
given; artificial variables that cannot be pivoted out at the end of phase 1
mark dependent rows, which are dropped before phase 2.
"""
import logging
from dataclasses import dataclass
from enum import Enum, unique
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as splinalg

from otsep.core.config import SolverConfig, settings
from otsep.core.exceptions import InfeasibleError, IterationLimitError, SolverError, UnboundedError
from otsep.transport.lp import CoupledPlanSet, LinearProgram

logger = logging.getLogger(__name__)

# Devex reference weights are reset once they grow past this
DEVEX_RESET = 1e6


@unique
class SolveStatus(Enum):
    OPTIMAL = 1
    INFEASIBLE = 2
    UNBOUNDED = 3
    ITERATION_LIMIT = 4


@unique
class Pricing(Enum):
    DEVEX = "devex"
    DANTZIG = "dantzig"
    BLAND = "bland"


@dataclass(frozen=True, eq=False)
class SimplexBasis:
    """Warm-start token: the rows kept after phase 1 and the basic columns."""

    active_rows: np.ndarray
    basic: np.ndarray


@dataclass(frozen=True, eq=False)
class SimplexResult:
    x: np.ndarray
    objective: float
    status: SolveStatus
    iterations: int
    phase1_iterations: int
    basis: SimplexBasis
    warm_started: bool


class Basis(object):
    """
    Basic column indices plus the factorized basis matrix.
    `A` must be CSC so columns can be read straight from indptr.
    """

    def __init__(self, A: sp.csc_matrix, idxB: np.ndarray, refactor_interval: int):
        self.A = A
        self.m = A.shape[0]
        self.idxB = np.array(idxB, dtype=np.int64)
        self.refactor_interval = refactor_interval
        self.lu = None
        self.etas = []
        self.lu_factorize()

    def lu_factorize(self):
        B = self.A[:, self.idxB].tocsc()
        try:
            self.lu = splinalg.splu(B)
        except RuntimeError as e:
            raise SolverError("basis matrix is singular", {"rows": self.m, "reason": str(e)})
        self.etas = []

    def get_col(self, idx: int) -> np.ndarray:
        start, end = self.A.indptr[idx], self.A.indptr[idx + 1]
        col = np.zeros(self.m)
        col[self.A.indices[start:end]] = self.A.data[start:end]
        return col

    def ftran(self, y: np.ndarray) -> np.ndarray:
        # B x = y
        x = self.lu.solve(np.asarray(y, dtype=float))
        for r, v in self.etas:
            xr = x[r]
            if xr != 0.0:
                x += xr * v
        return x

    def btran(self, y: np.ndarray) -> np.ndarray:
        # B^T x = y
        z = np.array(y, dtype=float)
        for r, v in reversed(self.etas):
            z[r] += v @ z
        return self.lu.solve(z, trans="T")

    def row(self, r: int) -> np.ndarray:
        """Row r of B^-1, the multipliers of the pivot row."""
        e_r = np.zeros(self.m)
        e_r[r] = 1.0
        return self.btran(e_r)

    def replace(self, r: int, q: int, w: np.ndarray) -> bool:
        """Column q enters at position r given w = B^-1 a_q; returns True if refactorized."""
        eta = -w / w[r]
        eta[r] = 1.0 / w[r] - 1.0
        self.idxB[r] = q
        if len(self.etas) + 1 >= self.refactor_interval:
            self.lu_factorize()
            return True
        self.etas.append((r, eta))
        return False


class RevisedSimplex:
    def __init__(self, config: Optional[SolverConfig] = None):
        self.config = config or settings.solver

    def solve(
        self,
        c: np.ndarray,
        E: sp.spmatrix,
        f: np.ndarray,
        warm_start: Optional[SimplexBasis] = None,
    ) -> SimplexResult:
        cfg = self.config
        c = np.asarray(c, dtype=float)
        f = np.asarray(f, dtype=float)
        E = sp.csc_matrix(E)
        m, n = E.shape
        if c.shape[0] != n or f.shape[0] != m:
            shapes = {"rows": m, "cols": n, "len_c": c.shape[0], "len_f": f.shape[0]}
            raise self._failure(SolverError("inconsistent LP dimensions", shapes))
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(f)) and np.all(np.isfinite(E.data))):
            raise self._failure(SolverError("LP data must be finite"))

        self._row_scale = max(1.0, float(np.max(np.abs(f))) if m else 1.0)
        self._feas_abs = cfg.feas_tol * self._row_scale
        max_iter = cfg.max_iter or 50 * (m + n)
        rng = np.random.default_rng(cfg.perturbation_seed)
        delta = cfg.perturbation * self._row_scale * (0.5 + 0.5 * rng.random(n))

        start = None
        if warm_start is not None:
            start = self._try_warm_start(E, f, warm_start)
        phase1_iterations = 0
        if start is None:
            start, phase1_iterations = self._phase1(E, f + E @ delta, max_iter)
        active_rows, idxB = start

        A = E.tocsr()[np.flatnonzero(active_rows)].tocsc()
        AT = A.T.tocsr()
        rhs = f[active_rows]
        basis = Basis(A, idxB, cfg.refactor_interval)
        if phase1_iterations == 0 and cfg.perturbation > 0:
            delta = self._lift_perturbation(A, basis, rhs, delta)
        shifted = rhs + A @ delta

        budget = max_iter - phase1_iterations
        x_B = self._basic_solution(basis, shifted)
        status, iterations, x_B = self._iterate(A, AT, c, shifted, basis, x_B, None, budget, phase=2)
        self._check_status(status, iterations + phase1_iterations, max_iter, m, n)

        repairs = 0
        if cfg.perturbation > 0:
            x_B = basis.ftran(rhs)
            repairs = self._restore_feasibility(AT, c, rhs, basis, x_B, budget - iterations)
            x_B = self._basic_solution(basis, rhs)
            status, final, x_B = self._iterate(
                A, AT, c, rhs, basis, x_B, None, budget - iterations - repairs, phase=2
            )
            iterations += repairs + final
            self._check_status(status, iterations + phase1_iterations, max_iter, m, n)

        # recompute from a fresh factorization to shed eta drift
        basis.lu_factorize()
        x_B = basis.ftran(rhs)
        x = np.zeros(n)
        x[basis.idxB] = x_B
        x[(x < 0) & (x >= -max(self.config.clamp_tol, self._feas_abs))] = 0.0
        objective = float(c @ x)
        logger.debug(
            f"Simplex optimal: objective={objective:.6g}, phase1={phase1_iterations}, phase2={iterations}, "
            f"repairs={repairs}, dropped_rows={int(m - active_rows.sum())}, "
            f"warm={warm_start is not None and phase1_iterations == 0}"
        )
        return SimplexResult(
            x=x,
            objective=objective,
            status=SolveStatus.OPTIMAL,
            iterations=iterations + phase1_iterations,
            phase1_iterations=phase1_iterations,
            basis=SimplexBasis(active_rows.copy(), basis.idxB.copy()),
            warm_started=phase1_iterations == 0 and warm_start is not None,
        )

    @staticmethod
    def _failure(error: SolverError) -> SolverError:
        logger.error(f"Simplex failed: {error}")
        return error

    def _check_status(self, status: SolveStatus, iterations: int, max_iter: int, m: int, n: int):
        if status is SolveStatus.UNBOUNDED:
            raise self._failure(UnboundedError("LP objective is unbounded below", {"rows": m, "cols": n}))
        if status is SolveStatus.ITERATION_LIMIT:
            raise self._failure(
                IterationLimitError(
                    "simplex iteration cap exceeded",
                    {"phase": 2, "iterations": iterations, "max_iter": max_iter, "rows": m, "cols": n},
                )
            )

    def _basic_solution(self, basis: Basis, rhs: np.ndarray) -> np.ndarray:
        x_B = basis.ftran(rhs)
        x_B[(x_B < 0) & (x_B >= -self._feas_abs)] = 0.0
        return x_B

    @staticmethod
    def _reduced_costs(basis: Basis, AT: sp.csr_matrix, c: np.ndarray) -> np.ndarray:
        y = basis.btran(c[basis.idxB])
        d = c - AT @ y
        d[basis.idxB] = 0.0
        return d

    def _lift_perturbation(self, A: sp.csc_matrix, basis: Basis, rhs: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """
        Raises delta on basic columns until the shifted basic solution is at
        least delta there. Shifting a basic column only moves its own entry
        of B^-1 (f + A delta), so the warm basis stays feasible.
        """
        delta = delta.copy()
        x_B = basis.ftran(rhs + A @ delta)
        floor = delta[basis.idxB]
        delta[basis.idxB] += np.maximum(floor - x_B, 0.0)
        return delta

    def _try_warm_start(self, E: sp.csc_matrix, f: np.ndarray, warm: SimplexBasis):
        m, n = E.shape
        active = np.asarray(warm.active_rows, dtype=bool)
        idxB = np.asarray(warm.basic, dtype=np.int64)
        if active.shape[0] != m or idxB.shape[0] != int(active.sum()) or (idxB.size and idxB.max() >= n):
            logger.debug("Warm-start basis does not match LP shape, cold start")
            return None
        if np.unique(idxB).size != idxB.size:
            logger.debug("Warm-start basis repeats a column, cold start")
            return None
        try:
            basis = Basis(E.tocsr()[np.flatnonzero(active)].tocsc(), idxB, self.config.refactor_interval)
        except SolverError:
            logger.debug("Warm-start basis is singular, cold start")
            return None
        x_B = basis.ftran(f[active])
        if x_B.size and x_B.min() < -self._feas_abs:
            logger.debug("Warm-start basis is primal infeasible, cold start")
            return None
        x = np.zeros(n)
        x[idxB] = np.maximum(x_B, 0.0)
        if m and np.max(np.abs(E @ x - f)) > 10 * self._feas_abs * max(1, m):
            logger.debug("Warm-start basis violates dropped rows, cold start")
            return None
        return active, idxB

    def _phase1(self, E: sp.csc_matrix, f: np.ndarray, max_iter: int):
        m, n = E.shape
        sign = np.where(f < 0, -1.0, 1.0)
        E_s = sp.diags(sign) @ E
        f_s = sign * f
        A1 = sp.hstack([E_s, sp.identity(m, format="csc")], format="csc")
        c1 = np.concatenate([np.zeros(n), np.ones(m)])
        basis = Basis(A1, np.arange(n, n + m), self.config.refactor_interval)
        x_B = f_s.copy()
        eligible = np.ones(n + m, dtype=bool)
        status, iterations, x_B = self._iterate(A1, A1.T.tocsr(), c1, f_s, basis, x_B, eligible, max_iter, phase=1)
        if status is SolveStatus.ITERATION_LIMIT:
            raise self._failure(
                IterationLimitError(
                    "simplex iteration cap exceeded", {"phase": 1, "iterations": iterations, "max_iter": max_iter}
                )
            )
        if status is SolveStatus.UNBOUNDED:
            raise self._failure(SolverError("phase 1 reported unbounded", {"rows": m, "cols": n}))

        artificial = basis.idxB >= n
        infeasibility = float(np.sum(np.abs(x_B[artificial]))) if artificial.any() else 0.0
        if infeasibility > self._feas_abs * max(1, m):
            raise self._failure(
                InfeasibleError("LP constraints are infeasible", {"phase1_objective": infeasibility, "rows": m})
            )

        # Pivot remaining (zero-level) artificials out; failures mark dependent rows
        E_s_T = E_s.tocsr().T.tocsr()
        redundant = []
        for p in np.flatnonzero(basis.idxB >= n):
            rho = basis.row(p)
            row = E_s_T @ rho
            row[basis.idxB[basis.idxB < n]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) <= 1e-9 * max(1.0, float(np.max(np.abs(rho)))):
                redundant.append(int(basis.idxB[p] - n))
                continue
            w = basis.ftran(basis.get_col(j))
            theta = x_B[p] / w[p]
            x_B -= theta * w
            x_B[p] = theta
            basis.replace(p, j, w)
        active = np.ones(m, dtype=bool)
        active[redundant] = False
        keep = basis.idxB < n
        idxB = basis.idxB[keep]
        if redundant:
            logger.debug(f"Phase 1 dropped {len(redundant)} dependent rows")
        logger.debug(f"Phase 1 finished after {iterations} pivots, infeasibility {infeasibility:.3g}")
        return (active, idxB), iterations

    def _iterate(self, A, AT, c, rhs, basis, x_B, eligible, max_iter, phase):
        """
        Primal simplex pivots from a feasible basis. Reduced costs are updated
        from the pivot row and recomputed at every refactorization and before
        optimality is declared.
        """
        cfg = self.config
        m, n = A.shape
        pricing = Pricing(cfg.pricing)
        stall_limit = cfg.bland_stall_factor * max(1, m)
        stall = 0
        weights = np.ones(n)
        d = self._reduced_costs(basis, AT, c)
        iterations = 0

        while True:
            # scaled by the basic costs, never by the largest cost
            c_B = c[basis.idxB]
            opt_abs = cfg.opt_tol * max(1.0, float(np.max(np.abs(c_B))) if m else 1.0)
            candidates = d < -opt_abs
            if eligible is not None:
                candidates &= eligible
            candidates = np.flatnonzero(candidates)
            if candidates.size == 0:
                d = self._reduced_costs(basis, AT, c)
                candidates = d < -opt_abs
                if eligible is not None:
                    candidates &= eligible
                candidates = np.flatnonzero(candidates)
                if candidates.size == 0:
                    return SolveStatus.OPTIMAL, iterations, x_B
            if iterations >= max_iter:
                return SolveStatus.ITERATION_LIMIT, iterations, x_B

            if pricing is Pricing.BLAND:
                q = int(candidates[0])
            elif pricing is Pricing.DEVEX:
                score = d[candidates] ** 2 / weights[candidates]
                q = int(candidates[np.argmax(score)])
            else:
                q = int(candidates[np.argmin(d[candidates])])

            w = basis.ftran(basis.get_col(q))
            rows = np.flatnonzero(w > cfg.pivot_tol)
            if rows.size == 0:
                return SolveStatus.UNBOUNDED, iterations, x_B
            ratios = np.maximum(x_B[rows], 0.0) / w[rows]
            theta = ratios.min()
            tied = rows[ratios <= theta + self._feas_abs * 1e-3]
            if pricing is Pricing.BLAND:
                r = int(tied[np.argmin(basis.idxB[tied])])
            else:
                r = int(tied[np.argmax(w[tied])])
            theta = max(x_B[r], 0.0) / w[r]
            pivot = w[r]
            d_q = d[q]
            leaving = int(basis.idxB[r])

            alpha = AT @ basis.row(r)
            d -= (d_q / pivot) * alpha
            d[q] = 0.0
            d[leaving] = -d_q / pivot
            if pricing is Pricing.DEVEX:
                w_q = weights[q]
                ratio = alpha / pivot
                np.maximum(weights, ratio * ratio * w_q, out=weights)
                weights[leaving] = max(w_q / (pivot * pivot), 1.0)
                weights[q] = 1.0
                if weights[leaving] > DEVEX_RESET:
                    weights[:] = 1.0

            x_B = x_B - theta * w
            x_B[r] = theta
            if eligible is not None and leaving >= n - m:
                # artificial columns never re-enter once they leave
                eligible[leaving] = False
            if basis.replace(r, q, w):
                x_B = self._basic_solution(basis, rhs)
                d = self._reduced_costs(basis, AT, c)
            else:
                x_B[(x_B < 0) & (x_B >= -self._feas_abs)] = 0.0
            iterations += 1

            if theta * -d_q > opt_abs * self._feas_abs:
                stall = 0
            else:
                stall += 1
                if stall > stall_limit and pricing is not Pricing.BLAND:
                    logger.debug(f"Phase {phase}: stalled for {stall} pivots, Bland's rule until optimal")
                    pricing = Pricing.BLAND

    def _restore_feasibility(self, AT, c, rhs, basis, x_B, max_iter) -> int:
        """
        Dual simplex pivots from a dual feasible basis until no basic value
        is below -feas_tol; smallest-index choices once it stalls.
        """
        cfg = self.config
        m = basis.m
        stall_limit = cfg.bland_stall_factor * max(1, m)
        iterations = 0
        while True:
            infeasible = np.flatnonzero(x_B < -self._feas_abs)
            if infeasible.size == 0:
                return iterations
            if iterations >= max_iter:
                raise self._failure(
                    IterationLimitError("dual repair iteration cap exceeded", {"iterations": iterations, "rows": m})
                )
            bland = iterations > stall_limit
            if bland:
                r = int(infeasible[np.argmin(basis.idxB[infeasible])])
            else:
                r = int(infeasible[np.argmin(x_B[infeasible])])
            alpha = AT @ basis.row(r)
            alpha[basis.idxB] = 0.0
            entering = np.flatnonzero(alpha < -cfg.pivot_tol)
            if entering.size == 0:
                raise self._failure(
                    InfeasibleError("LP constraints are infeasible", {"row": r, "value": float(x_B[r])})
                )
            d = self._reduced_costs(basis, AT, c)
            ratios = np.maximum(d[entering], 0.0) / -alpha[entering]
            step = ratios.min()
            tied = entering[ratios <= step + cfg.opt_tol]
            q = int(tied[0]) if bland else int(tied[np.argmax(np.abs(alpha[tied]))])

            w = basis.ftran(basis.get_col(q))
            theta = x_B[r] / w[r]
            x_B = x_B - theta * w
            x_B[r] = theta
            if basis.replace(r, q, w):
                x_B = basis.ftran(rhs)
            iterations += 1
            if iterations == stall_limit + 1:
                logger.debug(f"Dual repair stalled for {stall_limit} pivots, smallest-index choices from now on")


def solve_lp(
    lp: LinearProgram,
    warm_start: Optional[SimplexBasis] = None,
    config: Optional[SolverConfig] = None,
) -> CoupledPlanSet:
    """
    Global minimizer of the coupled LP as a plan set; the basis is kept for
    warm starts. Without one, the north-west corner crash basis is used.
    """
    if warm_start is None:
        warm_start = SimplexBasis(*lp.crash_basis())
    result = RevisedSimplex(config).solve(lp.c, lp.E, lp.f, warm_start=warm_start)
    return lp.unpack(result.x, result.objective, basis=result.basis)
