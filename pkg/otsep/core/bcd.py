"""
Block coordinate descent for joint ensemble separation and identification.

Each outer iteration solves the coupled transport LP for fixed dynamics
(step 1) and then refits every ensemble's dynamics by weighted least
squares on its transport plans (step 2). Both steps are exact minimizations
over their block, so the objective recorded after every step 1 never
increases.
"""
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from otsep.core.config import BcdConfig, SolverConfig, settings
from otsep.core.exceptions import ConfigurationError, DatasetError
from otsep.core.measures import ObservationSequence, validate
from otsep.dynamics.affine import AffineModel, ModelKind, WeightedPairs, fit_weighted
from otsep.transport.lp import CoupledPlanSet, build_costs, build_coupled_lp
from otsep.transport.simplex import solve_lp
from otsep.utils.rng import derive_rng

logger = logging.getLogger(__name__)

EMPTY_ENSEMBLE_RTOL = 1e-12


class BcdOptions(BcdConfig):
    seed: int = Field(0, ge=0, lt=2**64)

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_settings(cls, **overrides) -> "BcdOptions":
        values = settings.bcd.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True, eq=False)
class SeparationSolution:
    models: List[AffineModel]
    plans: Optional[CoupledPlanSet]
    objective_trace: List[float]
    labels: List[np.ndarray]
    converged: bool
    restart_index: int = 0
    iterations: int = 0
    restart_objectives: List[float] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def K(self) -> int:
        return len(self.models)

    @property
    def kind(self) -> ModelKind:
        return self.models[0].kind


def extract_labels(plans: CoupledPlanSet) -> List[np.ndarray]:
    """label(t, i) = argmax_k marginals[k][t][i], ties toward the smaller k."""
    labels = []
    for t in range(plans.T):
        stacked = np.vstack([plans.marginals[k][t] for k in range(plans.K)])
        labels.append(np.argmax(stacked, axis=0))
    return labels


def _check_inputs(seq: ObservationSequence, K: int, kind: ModelKind, init: Optional[Sequence[AffineModel]] = None):
    validate(seq)
    if K < 1:
        raise ConfigurationError(f"number of ensembles must be positive, got {K}")
    smallest = min(seq.sizes)
    if K > smallest:
        raise ConfigurationError(f"K={K} exceeds the number of points ({smallest}) observed at some time")
    if init is not None:
        if len(init) != K:
            raise ConfigurationError(f"expected {K} initial models, got {len(init)}")
        for model in init:
            if model.d != seq.d:
                raise ConfigurationError(f"initial model dimension {model.d} differs from data dimension {seq.d}")
            if model.kind is not kind:
                raise ConfigurationError(f"initial model kind {model.kind.value} differs from requested {kind.value}")


def refit_models(
    seq: ObservationSequence,
    plans: CoupledPlanSet,
    models: Sequence[AffineModel],
    kind: ModelKind,
) -> List[AffineModel]:
    """Step 2: per-ensemble weighted least squares pooled over all time steps."""
    total = seq.total_mass
    updated = []
    for k, model in enumerate(models):
        if plans.ensemble_mass(k) < EMPTY_ENSEMBLE_RTOL * total:
            logger.warning(f"Ensemble {k} carries no mass, keeping its dynamics unchanged")
            updated.append(model)
            continue
        pairs = WeightedPairs.concatenate(
            WeightedPairs.from_plan(plans.plans[k][t], seq.measures[t], seq.measures[t + 1])
            for t in range(seq.T - 1)
        )
        updated.append(fit_weighted(pairs, kind))
    return updated


def bcd_fit(
    seq: ObservationSequence,
    K: int,
    kind: Union[ModelKind, str],
    init: Sequence[AffineModel],
    opts: Optional[BcdOptions] = None,
    solver_config: Optional[SolverConfig] = None,
) -> SeparationSolution:
    kind = ModelKind(kind)
    opts = opts or BcdOptions.from_settings()
    _check_inputs(seq, K, kind, init)

    models = list(init)
    trace: List[float] = []
    warm = None
    converged = False
    iterations = 0

    lp = None
    while iterations < opts.max_iters:
        iterations += 1
        costs = build_costs(models, seq)
        # constraints depend only on the data; later iterations swap costs and warm-start
        lp = build_coupled_lp(seq, costs) if lp is None else lp.with_costs(costs)
        plans = solve_lp(lp, warm_start=warm, config=solver_config)
        warm = plans.basis
        objective = plans.objective
        trace.append(objective)
        logger.debug(f"BCD iteration {iterations}: objective={objective:.10g}")

        if objective <= 0.0:
            converged = True
            break
        if len(trace) > 1:
            previous = trace[-2]
            if previous - objective < opts.rel_tol * previous:
                converged = True
                break
        if iterations == opts.max_iters:
            # models stay paired with the plans they produced
            break
        models = refit_models(seq, plans, models, kind)

    if not converged:
        logger.warning(f"BCD stopped at the iteration cap ({opts.max_iters}) before converging")

    return SeparationSolution(
        models=models,
        plans=plans,
        objective_trace=trace,
        labels=extract_labels(plans),
        converged=converged,
        iterations=iterations,
    )


def initial_models(d: int, K: int, kind: Union[ModelKind, str], opts: BcdOptions, restart: int) -> List[AffineModel]:
    """Restart `restart`'s initialization: entries i.i.d. N(0, init_scale^2)."""
    rng = derive_rng(opts.seed, restart)
    return [AffineModel.random(ModelKind(kind), d, rng, opts.init_scale) for _ in range(K)]


def _run_restart(args) -> SeparationSolution:
    seq, K, kind, opts, solver_config, restart = args
    init = initial_models(seq.d, K, kind, opts, restart)
    solution = bcd_fit(seq, K, kind, init, opts, solver_config)
    logger.info(
        f"Restart {restart}: objective={solution.objective:.6g} after {solution.iterations} iterations"
        f"{'' if solution.converged else ' (not converged)'}"
    )
    return solution


def multi_start(
    seq: ObservationSequence,
    K: int,
    kind: Union[ModelKind, str],
    opts: Optional[BcdOptions] = None,
    solver_config: Optional[SolverConfig] = None,
) -> SeparationSolution:
    """Best of `opts.restarts` BCD runs from random initializations (smallest objective, then index)."""
    kind = ModelKind(kind)
    opts = opts or BcdOptions.from_settings()
    _check_inputs(seq, K, kind)
    jobs = [(seq, K, kind, opts, solver_config, r) for r in range(opts.restarts)]

    if opts.workers > 1 and opts.restarts > 1:
        with ProcessPoolExecutor(max_workers=opts.workers) as pool:
            solutions = list(pool.map(_run_restart, jobs))
    else:
        solutions = [_run_restart(job) for job in jobs]

    objectives = [s.objective for s in solutions]
    best = int(np.argmin(objectives))
    chosen = solutions[best]
    logger.info(f"Selected restart {best} of {len(solutions)} with objective {chosen.objective:.6g}")
    return SeparationSolution(
        models=chosen.models,
        plans=chosen.plans,
        objective_trace=chosen.objective_trace,
        labels=chosen.labels,
        converged=chosen.converged,
        restart_index=best,
        iterations=chosen.iterations,
        restart_objectives=objectives,
    )


class SolutionRecord(BaseModel):
    kind: str
    K: int
    d: int
    models: List[dict]
    labels: List[List[int]]
    objective: float
    objective_trace: List[float]
    converged: bool
    restart_index: int = 0
    iterations: int = 0
    restart_objectives: List[float] = []
    plans: Optional[List[List[List[List[float]]]]] = None
    marginals: Optional[List[List[List[float]]]] = None


def solution_to_record(solution: SeparationSolution, include_plans: bool = False) -> SolutionRecord:
    record = SolutionRecord(
        kind=solution.kind.value,
        K=solution.K,
        d=solution.models[0].d,
        models=[m.to_record() for m in solution.models],
        labels=[[int(v) for v in lab] for lab in solution.labels],
        objective=solution.objective,
        objective_trace=[float(v) for v in solution.objective_trace],
        converged=solution.converged,
        restart_index=solution.restart_index,
        iterations=solution.iterations,
        restart_objectives=[float(v) for v in solution.restart_objectives],
    )
    if include_plans and solution.plans is not None:
        record.plans = [[p.tolist() for p in per_k] for per_k in solution.plans.plans]
        record.marginals = [[m.tolist() for m in per_k] for per_k in solution.plans.marginals]
    return record


def save_solution(solution: SeparationSolution, path: Union[str, Path], include_plans: bool = False) -> None:
    record = solution_to_record(solution, include_plans)
    Path(path).write_text(record.model_dump_json(indent=2, exclude_none=True))
    logger.info(f"Wrote solution (K={solution.K}, objective={solution.objective:.6g}) to {path}")


def load_solution(path: Union[str, Path]) -> SeparationSolution:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Solution file not found: {path}")
    try:
        record = SolutionRecord.model_validate(json.loads(path.read_text()))
    except ValueError as e:
        raise DatasetError(f"{path}: malformed solution file: {e}")
    plans = None
    if record.plans is not None and record.marginals is not None:
        plans = CoupledPlanSet(
            plans=[[np.asarray(p, dtype=float) for p in per_k] for per_k in record.plans],
            marginals=[[np.asarray(m, dtype=float) for m in per_k] for per_k in record.marginals],
            objective=record.objective,
        )
    return SeparationSolution(
        models=[AffineModel.from_record(r) for r in record.models],
        plans=plans,
        objective_trace=list(record.objective_trace),
        labels=[np.asarray(lab, dtype=int) for lab in record.labels],
        converged=record.converged,
        restart_index=record.restart_index,
        iterations=record.iterations,
        restart_objectives=list(record.restart_objectives),
    )
