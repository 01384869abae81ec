"""
Monte Carlo comparison of the separation method against the baselines
over a grid of noise levels.
"""
import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from otsep.core.bcd import BcdOptions, multi_start
from otsep.core.config import METHODS, SolverConfig
from otsep.core.exceptions import ConfigurationError, DatasetError
from otsep.core.measures import ObservationSequence
from otsep.dynamics.affine import AffineModel, ModelKind, WeightedPairs, weighted_objective
from otsep.evaluation.baselines import TrajectorySet, labels_by_time, oracle_fit, semi_oracle_fit
from otsep.evaluation.metrics import evaluate
from otsep.synth.simulate import SimConfig, sample_instance
from otsep.utils.rng import derive_int_seed

logger = logging.getLogger(__name__)

SWEEP_FIELDS = ["sigma2", "trial", "method", "param_sq_error", "classification_accuracy", "objective"]
# wall-clock times live in a separate file from the records
TIMING_FIELDS = ["sigma2", "trial", "method", "wall_ms"]
AGGREGATE_FIELDS = ["sigma2", "method", "metric", "median", "p5", "p95", "n"]
AGGREGATED_METRICS = ["param_sq_error", "classification_accuracy", "objective"]


class SweepRecord(BaseModel):
    sigma2: float
    trial: int
    method: str
    param_sq_error: float
    classification_accuracy: float
    objective: float
    wall_ms: float = Field(0.0, exclude=True)


class AggregateRow(BaseModel):
    sigma2: float
    method: str
    metric: str
    median: float
    p5: float
    p95: float
    n: int


def trajectory_residual(models: Sequence[AffineModel], trajs: TrajectorySet, labels: np.ndarray) -> float:
    """Sum of squared one-step prediction errors of each trajectory under its assigned model."""
    total = 0.0
    for k, model in enumerate(models):
        members = trajs.trajectories[labels == k]
        if members.shape[0]:
            total += weighted_objective(model, WeightedPairs.from_trajectories(members))
    return total


def _run_method(
    method: str,
    seq: ObservationSequence,
    trajs: TrajectorySet,
    kind: ModelKind,
    bcd_opts: BcdOptions,
    kmeans_restarts: int,
    seed: int,
    solver_config: Optional[SolverConfig],
) -> Tuple[List[AffineModel], List[np.ndarray], float]:
    K = len(seq.true_models)
    if method == "proposed":
        solution = multi_start(seq, K, kind, bcd_opts, solver_config)
        return solution.models, solution.labels, solution.objective
    if method == "oracle":
        models = oracle_fit(trajs, kind)
        return models, list(seq.labels), trajectory_residual(models, trajs, trajs.labels)
    if method == "semi-oracle":
        models, labels = semi_oracle_fit(trajs, K, kind, kmeans_restarts=kmeans_restarts, seed=seed)
        return models, labels_by_time(labels, seq.particle_ids), trajectory_residual(models, trajs, labels)
    raise ConfigurationError(f"Unknown method {method!r}, expected one of {list(METHODS)}")


def run_trial(args) -> List[SweepRecord]:
    """One (noise level, trial) cell: sample an instance, then run every method on it."""
    base, sigma2_index, sigma2, trial, methods, kind, bcd_opts, kmeans_restarts, solver_config = args
    cfg = base.model_copy(update={"sigma2": sigma2, "seed": derive_int_seed(base.seed, sigma2_index, trial)})
    seq, trajs = sample_instance(cfg)
    # method seeds come from the cell index, never from execution order
    opts = bcd_opts.model_copy(update={"seed": derive_int_seed(base.seed, sigma2_index, trial, 1), "workers": 1})
    kmeans_seed = derive_int_seed(base.seed, sigma2_index, trial, 2)

    records = []
    for method in methods:
        start = time.perf_counter()
        models, labels, objective = _run_method(
            method, seq, trajs, kind, opts, kmeans_restarts, kmeans_seed, solver_config
        )
        wall_ms = (time.perf_counter() - start) * 1000.0
        report = evaluate(models, seq.true_models, labels, seq.labels)
        records.append(
            SweepRecord(
                sigma2=sigma2,
                trial=trial,
                method=method,
                param_sq_error=report.param_sq_error,
                classification_accuracy=report.classification_accuracy,
                objective=objective,
                wall_ms=wall_ms,
            )
        )
    return records


def monte_carlo_sweep(
    base: SimConfig,
    sigma2_grid: Sequence[float],
    trials: int,
    methods: Sequence[str] = METHODS,
    kind: Union[ModelKind, str] = ModelKind.AFFINE,
    bcd_opts: Optional[BcdOptions] = None,
    kmeans_restarts: int = 100,
    workers: int = 1,
    solver_config: Optional[SolverConfig] = None,
) -> List[SweepRecord]:
    if trials < 1:
        raise ConfigurationError(f"trials must be positive, got {trials}")
    if not sigma2_grid:
        raise ConfigurationError("empty noise grid")
    if any(s < 0 for s in sigma2_grid):
        raise ConfigurationError(f"noise variances must be nonnegative, got {list(sigma2_grid)}")
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise ConfigurationError(f"methods must be a nonempty subset of {list(METHODS)}, got {list(methods)}")

    kind = ModelKind(kind)
    bcd_opts = bcd_opts or BcdOptions.from_settings()
    # fixed method order keeps records independent of how methods were listed
    ordered = [m for m in METHODS if m in methods]
    jobs = [
        (base, i, float(s), trial, ordered, kind, bcd_opts, kmeans_restarts, solver_config)
        for i, s in enumerate(sigma2_grid)
        for trial in range(trials)
    ]
    logger.info(f"Sweep: {len(sigma2_grid)} noise levels x {trials} trials x {len(ordered)} methods")

    records: List[SweepRecord] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for cell in pool.map(run_trial, jobs):
                records.extend(cell)
    else:
        for n_done, job in enumerate(jobs, start=1):
            records.extend(run_trial(job))
            if n_done % trials == 0:
                logger.info(f"Finished sigma2={job[2]:.3g} ({n_done // trials}/{len(sigma2_grid)})")
    return records


def aggregate_sweep(records: Iterable[SweepRecord]) -> List[AggregateRow]:
    """Median and 5th/95th percentiles per (sigma2, method, metric)."""
    groups = {}
    for record in records:
        groups.setdefault((record.sigma2, record.method), []).append(record)

    method_rank = {m: i for i, m in enumerate(METHODS)}
    rows = []
    for sigma2, method in sorted(groups, key=lambda key: (key[0], method_rank.get(key[1], len(METHODS)), key[1])):
        members = groups[(sigma2, method)]
        for metric in AGGREGATED_METRICS:
            values = np.sort([getattr(r, metric) for r in members])
            p5, median, p95 = np.percentile(values, [5, 50, 95])
            rows.append(
                AggregateRow(
                    sigma2=sigma2,
                    method=method,
                    metric=metric,
                    median=float(median),
                    p5=float(p5),
                    p95=float(p95),
                    n=len(members),
                )
            )
    return rows


def _write_dicts(rows: Iterable[dict], fields: List[str], out: TextIO) -> None:
    writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for values in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in values.items()})


def _write_rows(rows: Sequence[BaseModel], fields: List[str], out: TextIO) -> None:
    _write_dicts((row.model_dump() for row in rows), fields, out)


def write_sweep_csv(records: Sequence[SweepRecord], out: Union[str, Path, TextIO]) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as f:
            _write_rows(records, SWEEP_FIELDS, f)
        logger.info(f"Wrote {len(records)} sweep records to {out}")
    else:
        _write_rows(records, SWEEP_FIELDS, out)


def write_timing_csv(records: Sequence[SweepRecord], out: Union[str, Path, TextIO]) -> None:
    rows = [{"sigma2": r.sigma2, "trial": r.trial, "method": r.method, "wall_ms": r.wall_ms} for r in records]
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as f:
            _write_dicts(rows, TIMING_FIELDS, f)
        logger.info(f"Wrote {len(rows)} timings to {out}")
    else:
        _write_dicts(rows, TIMING_FIELDS, out)


def write_aggregate_csv(rows: Sequence[AggregateRow], out: Union[str, Path, TextIO]) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as f:
            _write_rows(rows, AGGREGATE_FIELDS, f)
        logger.info(f"Wrote {len(rows)} aggregate rows to {out}")
    else:
        _write_rows(rows, AGGREGATE_FIELDS, out)


def read_sweep_csv(path: Union[str, Path]) -> List[SweepRecord]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Sweep file not found: {path}")
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SWEEP_FIELDS:
            raise DatasetError(f"{path}: header must be {','.join(SWEEP_FIELDS)}, got {reader.fieldnames}")
        try:
            return [SweepRecord.model_validate(row) for row in reader]
        except ValueError as e:
            raise DatasetError(f"{path}: malformed sweep record: {e}")
