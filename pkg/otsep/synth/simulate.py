"""
Synthetic ensembles of noisy affine systems.

Each ensemble draws its own (A_k, b_k); its particles start from standard
normal states and evolve as x' = A_k x + b_k + w with w ~ N(0, sigma2 I).
Only the per-time point clouds reach the separation solver; the
trajectories and labels are kept for baselines and metrics.
"""
import json
import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from pydantic import BaseModel, model_validator

from otsep.core.config import SimulationConfig, settings
from otsep.core.exceptions import DatasetError
from otsep.core.measures import DiscreteMeasure, ObservationSequence
from otsep.dynamics.affine import AffineModel, models_from_records, models_to_records
from otsep.evaluation.baselines import TrajectorySet
from otsep.utils.rng import derive_rng

logger = logging.getLogger(__name__)


class SimConfig(SimulationConfig):
    @model_validator(mode="after")
    def check_sizes(self) -> "SimConfig":
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if self.T < 2:
            raise ValueError(f"need at least 2 time points, got {self.T}")
        if len(self.N) != self.K:
            raise ValueError(f"{len(self.N)} ensemble sizes given for K={self.K}")
        if any(n <= 0 for n in self.N):
            raise ValueError(f"ensemble sizes must be positive, got {self.N}")
        if self.sigma2 < 0:
            raise ValueError(f"noise variance must be nonnegative, got {self.sigma2}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        return self

    @classmethod
    def from_settings(cls, **overrides) -> "SimConfig":
        values = settings.simulation.model_dump()
        values.update({k: v for k, v in overrides.items() if v is not None})
        if overrides.get("N") is not None and overrides.get("K") is None:
            values["K"] = len(values["N"])
        return cls(**values)


def sample_models(cfg: SimConfig, rng: np.random.Generator) -> List[AffineModel]:
    scale = cfg.dynamics_scale
    return [
        AffineModel.affine(scale * rng.standard_normal((cfg.d, cfg.d)), scale * rng.standard_normal(cfg.d))
        for _ in range(cfg.K)
    ]


def sample_instance(cfg: SimConfig) -> Tuple[ObservationSequence, TrajectorySet]:
    rng = derive_rng(cfg.seed)
    models = sample_models(cfg, rng)
    noise_std = np.sqrt(cfg.sigma2)

    blocks, labels = [], []
    for k, (model, n_k) in enumerate(zip(models, cfg.N)):
        states = np.empty((n_k, cfg.T, cfg.d))
        states[:, 0, :] = cfg.init_scale * rng.standard_normal((n_k, cfg.d))
        for t in range(cfg.T - 1):
            noise = noise_std * rng.standard_normal((n_k, cfg.d))
            states[:, t + 1, :] = model.apply_points(states[:, t, :]) + noise
        blocks.append(states)
        labels.append(np.full(n_k, k))
    trajectories = np.concatenate(blocks)
    trajectory_labels = np.concatenate(labels)
    n = trajectories.shape[0]

    # observation order is shuffled independently at every time
    measures, time_labels, ids = [], [], []
    for t in range(cfg.T):
        order = rng.permutation(n)
        measures.append(DiscreteMeasure(trajectories[order, t, :], np.ones(n)))
        time_labels.append(trajectory_labels[order])
        ids.append(order)

    seq = ObservationSequence(
        tuple(measures), labels=tuple(time_labels), particle_ids=tuple(ids), true_models=tuple(models)
    )
    trajs = TrajectorySet(trajectories, labels=trajectory_labels, true_models=tuple(models))
    logger.debug(f"Sampled instance: K={cfg.K}, N={cfg.N}, T={cfg.T}, sigma2={cfg.sigma2:g}, seed={cfg.seed}")
    return seq, trajs


class TruthRecord(BaseModel):
    models: List[dict]


def truth_path(dataset_path: Union[str, Path]) -> Path:
    """Sidecar next to a dataset: data.csv -> data.truth.json."""
    dataset_path = Path(dataset_path)
    return dataset_path.with_name(dataset_path.stem + ".truth.json")


def save_truth(models: List[AffineModel], path: Union[str, Path]) -> None:
    record = TruthRecord(models=models_to_records(models))
    Path(path).write_text(record.model_dump_json(indent=2))
    logger.info(f"Wrote {len(models)} true models to {path}")


def load_truth(path: Union[str, Path]) -> List[AffineModel]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Truth file not found: {path}")
    try:
        record = TruthRecord.model_validate(json.loads(path.read_text()))
        return models_from_records(record.models)
    except (ValueError, KeyError) as e:
        raise DatasetError(f"{path}: malformed truth file: {e}")
