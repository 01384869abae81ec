import numpy as np
import pytest

from otsep.core.bcd import BcdOptions
from otsep.core.config import SolverConfig
from otsep.core.measures import DiscreteMeasure, ObservationSequence
from otsep.dynamics.affine import AffineModel
from otsep.synth.gmm import GmmConfig
from otsep.synth.simulate import SimConfig, sample_instance


def unit_measure(points) -> DiscreteMeasure:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    return DiscreteMeasure(points, np.ones(points.shape[0]))


def well_separated_models():
    return [
        AffineModel.affine([[0.9, 0.2], [-0.1, 0.8]], [3.0, 0.0]),
        AffineModel.affine([[0.5, -0.4], [0.3, 1.1]], [-3.0, 2.0]),
    ]


@pytest.fixture
def solver_config():
    return SolverConfig()


@pytest.fixture
def small_config():
    return SimConfig(d=2, K=2, N=[3, 4], T=3, sigma2=0.0, seed=11)


@pytest.fixture
def small_instance(small_config):
    return sample_instance(small_config)


@pytest.fixture
def default_instance():
    return sample_instance(SimConfig(sigma2=0.0, seed=5))


@pytest.fixture
def separated_instance():
    """Two ensembles with hand-picked, well separated dynamics and no noise."""
    rng = np.random.default_rng(2024)
    models = well_separated_models()
    sizes = [4, 5]
    T = 4
    blocks, labels = [], []
    for k, (model, n) in enumerate(zip(models, sizes)):
        states = [rng.standard_normal((n, 2))]
        for _ in range(T - 1):
            states.append(model.apply_points(states[-1]))
        blocks.append(np.stack(states, axis=1))
        labels.append(np.full(n, k))
    trajectories = np.concatenate(blocks)
    trajectory_labels = np.concatenate(labels)
    n = trajectories.shape[0]
    seq = ObservationSequence(
        tuple(DiscreteMeasure(trajectories[:, t, :], np.ones(n)) for t in range(T)),
        labels=tuple(trajectory_labels for _ in range(T)),
        particle_ids=tuple(np.arange(n) for _ in range(T)),
        true_models=tuple(models),
    )
    return seq, trajectories, trajectory_labels


@pytest.fixture
def fast_opts():
    return BcdOptions(restarts=2, max_iters=50, seed=3)


@pytest.fixture
def small_gmm():
    # coarse grid keeps the LP small; one cell is 0.25
    return GmmConfig(p=0.4, p_prime=0.6, a=0.0, a_prime=4.0, sigma=0.5, sigma_prime=0.3, grid=(-3.0, 7.0, 41))
