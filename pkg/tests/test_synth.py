import io
import time

import numpy as np
import pytest
from pydantic import ValidationError

from otsep.core.bcd import BcdOptions, multi_start
from otsep.core.config import default_sigma2_grid
from otsep.core.exceptions import ConfigurationError, DatasetError
from otsep.dynamics.affine import AffineModel, ModelKind
from otsep.synth.gmm import GmmConfig, discretize_mixture, gmm_example, gmm_multimode
from otsep.synth.simulate import SimConfig, load_truth, sample_instance, save_truth, truth_path
from otsep.synth.sweep import (
    SWEEP_FIELDS,
    TIMING_FIELDS,
    SweepRecord,
    aggregate_sweep,
    monte_carlo_sweep,
    read_sweep_csv,
    write_sweep_csv,
    write_timing_csv,
)
from otsep.transport.classic import solve_classic_ot


def test_noise_free_pairs_follow_dynamics(default_instance):
    _, trajs = default_instance
    for k, model in enumerate(trajs.true_models):
        members = trajs.trajectories[trajs.labels == k]
        for t in range(trajs.T - 1):
            residual = model.apply_points(members[:, t, :]) - members[:, t + 1, :]
            assert np.max(np.abs(residual)) <= 1e-12


def test_default_population(default_instance):
    seq, trajs = default_instance
    assert seq.T == 7
    assert seq.sizes == [37] * 7
    assert all(np.all(m.masses == 1.0) for m in seq.measures)
    assert trajs.trajectories.shape == (37, 7, 2)
    assert len(seq.true_models) == 3
    # observation order is shuffled but particle ids point back at the trajectories
    for t in range(seq.T):
        assert np.array_equal(seq.measures[t].points, trajs.trajectories[seq.particle_ids[t], t, :])
        assert np.array_equal(seq.labels[t], trajs.labels[seq.particle_ids[t]])


def test_same_seed_same_instance():
    cfg = SimConfig(seed=42, sigma2=1e-3)
    first, _ = sample_instance(cfg)
    second, _ = sample_instance(cfg)
    for a, b in zip(first.measures, second.measures):
        assert np.array_equal(a.points, b.points)
    other, _ = sample_instance(SimConfig(seed=43, sigma2=1e-3))
    assert not np.array_equal(first.measures[0].points, other.measures[0].points)


def test_sim_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(K=2, N=[10, 12, 15])
    with pytest.raises(ValidationError):
        SimConfig(sigma2=-1.0)
    with pytest.raises(ValidationError):
        SimConfig(N=[10, 0, 15])
    assert SimConfig.from_settings(N=[4, 5]).K == 2


def test_truth_sidecar(tmp_path, default_instance):
    seq, _ = default_instance
    path = truth_path(tmp_path / "data.csv")
    assert path.name == "data.truth.json"
    save_truth(list(seq.true_models), path)
    loaded = load_truth(path)
    for a, b in zip(loaded, seq.true_models):
        assert np.array_equal(a.theta, b.theta)
    with pytest.raises(DatasetError):
        load_truth(tmp_path / "missing.json")


def test_gmm_masses_balance(small_gmm):
    seq = gmm_example(small_gmm)
    mu, nu = seq.measures
    assert mu.total_mass == pytest.approx(nu.total_mass, rel=1e-14)
    assert mu.total_mass == pytest.approx(small_gmm.p + small_gmm.p_prime, rel=1e-14)
    assert [m.b[0] for m in seq.true_models] == [4.0, -4.0]


def test_gmm_discretization_integrates_to_weight():
    cfg = GmmConfig()
    masses = discretize_mixture([cfg.p, cfg.p_prime], [cfg.a, cfg.a_prime], [cfg.sigma, cfg.sigma_prime], cfg.grid)
    assert masses.sum() == pytest.approx(cfg.p + cfg.p_prime, abs=1e-6)


def test_gmm_mirror_symmetry():
    cfg = GmmConfig(a=-2.0, a_prime=2.0, grid=(-5.0, 5.0, 101))
    mu, nu = gmm_example(cfg).measures
    assert np.allclose(mu.masses[::-1], nu.masses, rtol=1e-12, atol=1e-15)


def test_gmm_narrow_grid_is_an_error():
    with pytest.raises(ConfigurationError):
        gmm_example(GmmConfig(grid=(-1.0, 1.0, 50)))
    with pytest.raises(ValidationError):
        GmmConfig(grid=(1.0, 0.0, 50))
    with pytest.raises(ValidationError):
        GmmConfig(grid=(0.0, 1.0, 1))


def test_gmm_multimode_shifts():
    seq = gmm_multimode([0.2, 0.3, 0.5], [0.0, 3.0, 6.0], [0.3, 0.4, 0.5], [1, 2, 0], (-3.0, 9.0, 61))
    assert [m.b[0] for m in seq.true_models] == [3.0, 3.0, -6.0]
    with pytest.raises(ConfigurationError):
        gmm_multimode([0.5, 0.5], [0.0, 1.0], [0.3, 0.3], [0, 0], (-3.0, 4.0, 20))


def test_classic_transport_splits_modes(small_gmm):
    seq = gmm_example(small_gmm)
    mu, nu = seq.measures
    cost = AffineModel.identity(1, ModelKind.SHIFT).cost_matrix(mu, nu)
    result = solve_classic_ot(cost, mu, nu)
    assert result.objective > 0.1
    rows, cols = np.nonzero(result.plan > 1e-9)
    displacements = nu.points[cols, 0] - mu.points[rows, 0]
    assert np.ptp(displacements) > 1.0


def test_shift_separation_recovers_mode_swap(small_gmm):
    seq = gmm_example(small_gmm)
    opts = BcdOptions(restarts=10, init_scale=4.0, seed=0)
    solution = multi_start(seq, 2, ModelKind.SHIFT, opts)
    cell = (small_gmm.grid[1] - small_gmm.grid[0]) / (small_gmm.grid[2] - 1)
    shifts = sorted(m.b[0] for m in solution.models)
    assert shifts[0] == pytest.approx(-4.0, abs=cell)
    assert shifts[1] == pytest.approx(4.0, abs=cell)
    assert solution.objective <= 1e-3 * seq.total_mass * 16.0


@pytest.mark.slow
def test_shift_separation_on_default_grid():
    cfg = GmmConfig()
    seq = gmm_example(cfg)
    start = time.perf_counter()
    solution = multi_start(seq, 2, ModelKind.SHIFT, BcdOptions(restarts=10, init_scale=4.0, seed=0))
    assert time.perf_counter() - start <= 60.0
    shifts = sorted(m.b[0] for m in solution.models)
    assert shifts[0] == pytest.approx(-4.0, abs=0.05)
    assert shifts[1] == pytest.approx(4.0, abs=0.05)
    assert solution.objective <= 1e-3 * seq.total_mass * 16.0


def test_sweep_counts_and_oracle_precision():
    base = SimConfig(N=[4, 5, 6], T=5)
    records = monte_carlo_sweep(base, [0.0, 1e-2], 2, ["oracle", "semi-oracle"], kmeans_restarts=5)
    assert len(records) == 2 * 2 * 2
    assert [r.method for r in records[:2]] == ["oracle", "semi-oracle"]
    noise_free = [r for r in records if r.sigma2 == 0.0 and r.method == "oracle"]
    assert all(r.param_sq_error <= 1e-18 for r in noise_free)
    assert all(r.classification_accuracy == 1.0 for r in noise_free)


def test_sweep_independent_of_method_order():
    base = SimConfig(N=[3, 4], K=2, T=4)
    first = monte_carlo_sweep(base, [1e-3], 1, ["semi-oracle", "oracle"], kmeans_restarts=3)
    second = monte_carlo_sweep(base, [1e-3], 1, ["oracle", "semi-oracle"], kmeans_restarts=3)
    key = lambda r: (r.sigma2, r.trial, r.method, r.param_sq_error, r.classification_accuracy, r.objective)
    assert [key(r) for r in first] == [key(r) for r in second]


def test_sweep_with_proposed_method():
    base = SimConfig(N=[3, 4], K=2, T=3)
    records = monte_carlo_sweep(
        base, [0.0], 1, ["proposed", "oracle"], bcd_opts=BcdOptions(restarts=2, max_iters=20)
    )
    assert [r.method for r in records] == ["proposed", "oracle"]
    assert records[0].objective >= -1e-12
    assert 0.0 <= records[0].classification_accuracy <= 1.0


def test_sweep_rejects_bad_input():
    base = SimConfig()
    with pytest.raises(ConfigurationError):
        monte_carlo_sweep(base, [1e-3], 0, ["oracle"])
    with pytest.raises(ConfigurationError):
        monte_carlo_sweep(base, [1e-3], 1, ["bogus"])
    with pytest.raises(ConfigurationError):
        monte_carlo_sweep(base, [], 1, ["oracle"])


def test_aggregate_is_order_invariant():
    records = [
        SweepRecord(sigma2=s, trial=i, method=m, param_sq_error=float(i + j), classification_accuracy=1.0,
                    objective=0.0, wall_ms=1.0)
        for s in (1e-3, 1e-5)
        for j, m in enumerate(("oracle", "proposed"))
        for i in range(11)
    ]
    rows = aggregate_sweep(records)
    shuffled = aggregate_sweep(records[::-1])
    assert [r.model_dump() for r in rows] == [r.model_dump() for r in shuffled]
    first = rows[0]
    assert (first.sigma2, first.method, first.metric) == (1e-5, "proposed", "param_sq_error")
    assert first.median == 6.0
    assert first.p5 == pytest.approx(1.5)
    assert first.p95 == pytest.approx(10.5)
    assert first.n == 11


def test_sweep_csv_round_trip(tmp_path):
    records = [
        SweepRecord(sigma2=1e-3, trial=0, method="oracle", param_sq_error=1.5e-7,
                    classification_accuracy=0.75, objective=0.125)
    ]
    buffer = io.StringIO()
    write_sweep_csv(records, buffer)
    assert buffer.getvalue().splitlines()[0] == ",".join(SWEEP_FIELDS)

    path = tmp_path / "sweep.csv"
    write_sweep_csv(records, path)
    assert read_sweep_csv(path) == records

    path.write_text("sigma2,trial\n")
    with pytest.raises(DatasetError):
        read_sweep_csv(path)


def test_timings_are_kept_out_of_records():
    record = SweepRecord(sigma2=1e-3, trial=2, method="oracle", param_sq_error=0.5,
                         classification_accuracy=1.0, objective=0.25, wall_ms=3.25)
    records, timings = io.StringIO(), io.StringIO()
    write_sweep_csv([record], records)
    write_timing_csv([record], timings)
    assert "wall_ms" not in records.getvalue()
    assert "3.25" not in records.getvalue()
    assert timings.getvalue().splitlines() == [",".join(TIMING_FIELDS), "0.001,2,oracle,3.25"]


def test_default_grid():
    grid = default_sigma2_grid()
    assert len(grid) == 8
    assert grid[0] == pytest.approx(1e-6)
    assert grid[-1] == pytest.approx(1e-1)
