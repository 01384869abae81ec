import numpy as np
import pytest

from otsep.core.exceptions import DimensionMismatchError, EmptyFitError
from otsep.core.measures import DiscreteMeasure
from otsep.dynamics.affine import (
    AffineModel,
    ModelKind,
    WeightedPairs,
    apply,
    cost_matrix,
    fit_weighted,
    models_from_records,
    models_to_records,
    weighted_objective,
)


def normal_equations_fit(pairs: WeightedPairs):
    Z = np.hstack([pairs.x, np.ones((pairs.x.shape[0], 1))])
    W = np.diag(pairs.w)
    coef = np.linalg.solve(Z.T @ W @ Z, Z.T @ W @ pairs.y)
    d = pairs.x.shape[1]
    return coef[:d].T, coef[d]


def test_apply():
    assert apply(AffineModel.identity(2), [3, -1]).tolist() == [3.0, -1.0]
    assert apply(AffineModel.shift([1, 0]), [0, 0]).tolist() == [1.0, 0.0]
    assert apply(AffineModel.affine([[0, 1], [1, 0]], [1, -1]), [2, 3]).tolist() == [4.0, 1.0]
    with pytest.raises(DimensionMismatchError):
        apply(AffineModel.identity(2), [1, 2, 3])


def test_shift_model_forces_identity():
    model = AffineModel(ModelKind.SHIFT, np.full((2, 2), 7.0), [1.0, 2.0])
    assert np.array_equal(model.A, np.eye(2))
    assert model.theta.tolist() == [1.0, 2.0]


def test_invalid_models():
    with pytest.raises(DimensionMismatchError):
        AffineModel.affine(np.eye(3), [0.0, 0.0])
    with pytest.raises(ValueError):
        AffineModel.affine(np.eye(1), [np.nan])


def test_cost_matrix():
    points = DiscreteMeasure([[0, 0], [1, 1]], [1, 1])
    assert cost_matrix(AffineModel.identity(2), points, points).tolist() == [[0.0, 2.0], [2.0, 0.0]]

    theta = 2.5
    source = DiscreteMeasure([[0.0]], [1.0])
    target = DiscreteMeasure([[theta]], [1.0])
    assert cost_matrix(AffineModel.shift([theta]), source, target)[0, 0] == 0.0

    model = AffineModel.affine([[0, 1], [1, 0]], [1, -1])
    C = cost_matrix(model, DiscreteMeasure([[2, 3]], [1]), DiscreteMeasure([[0, 0]], [1]))
    assert C[0, 0] == pytest.approx(17.0)


def test_cost_matrix_matches_pointwise():
    rng = np.random.default_rng(0)
    model = AffineModel.random(ModelKind.AFFINE, 3, rng)
    source = DiscreteMeasure(rng.standard_normal((5, 3)), np.ones(5))
    target = DiscreteMeasure(rng.standard_normal((4, 3)), np.ones(4))
    C = cost_matrix(model, source, target)
    for i in range(5):
        for j in range(4):
            expected = np.sum((apply(model, source.points[i]) - target.points[j]) ** 2)
            assert C[i, j] == pytest.approx(expected, rel=1e-12, abs=1e-12)
    with pytest.raises(DimensionMismatchError):
        cost_matrix(model, source, DiscreteMeasure(np.zeros((2, 2)), np.ones(2)))


def test_fit_recovers_generating_model():
    rng = np.random.default_rng(1)
    true = AffineModel.affine(rng.standard_normal((2, 2)), rng.standard_normal(2))
    x = rng.standard_normal((6, 2))
    pairs = WeightedPairs(x, true.apply_points(x), np.ones(6))
    fitted = fit_weighted(pairs, ModelKind.AFFINE)
    assert np.allclose(fitted.A, true.A, atol=1e-10)
    assert np.allclose(fitted.b, true.b, atol=1e-10)
    assert weighted_objective(fitted, pairs) == pytest.approx(0.0, abs=1e-18)

    scaled = fit_weighted(WeightedPairs(x, pairs.y, 10 * np.ones(6)), ModelKind.AFFINE)
    assert np.allclose(scaled.theta, fitted.theta, atol=1e-12)


def test_fit_shift_weighted_mean():
    pairs = WeightedPairs([[0.0], [2.0]], [[1.0], [4.0]], [1.0, 3.0])
    model = fit_weighted(pairs, "shift")
    assert model.kind is ModelKind.SHIFT
    assert model.b[0] == pytest.approx(1.75)


def test_fit_matches_normal_equations():
    rng = np.random.default_rng(7)
    for _ in range(100):
        d = int(rng.integers(1, 4))
        m = int(rng.integers(d + 2, 12))
        pairs = WeightedPairs(rng.standard_normal((m, d)), rng.standard_normal((m, d)), rng.uniform(0.1, 2.0, m))
        fitted = fit_weighted(pairs, ModelKind.AFFINE)
        A, b = normal_equations_fit(pairs)
        assert np.allclose(fitted.A, A, rtol=1e-9, atol=1e-9)
        assert np.allclose(fitted.b, b, rtol=1e-9, atol=1e-9)


def test_fit_residual_orthogonality_and_local_optimality():
    rng = np.random.default_rng(3)
    pairs = WeightedPairs(rng.standard_normal((20, 2)), rng.standard_normal((20, 2)), rng.uniform(0, 1, 20))
    model = fit_weighted(pairs, ModelKind.AFFINE)
    residual = model.apply_points(pairs.x) - pairs.y
    Z = np.hstack([pairs.x, np.ones((20, 1))])
    gradient = (pairs.w[:, None] * residual).T @ Z
    assert np.linalg.norm(gradient) <= 1e-8 * np.abs(pairs.y).max()

    best = weighted_objective(model, pairs)
    for _ in range(100):
        perturbed = AffineModel.from_theta(model.theta + 1e-3 * rng.standard_normal(6), ModelKind.AFFINE, 2)
        assert weighted_objective(perturbed, pairs) >= best


def test_rank_deficient_fit_is_minimum_norm():
    # every source point identical: only A x0 + b is determined
    x = np.ones((4, 1))
    y = np.full((4, 1), 3.0)
    model = fit_weighted(WeightedPairs(x, y, np.ones(4)), ModelKind.AFFINE)
    assert model.A[0, 0] == pytest.approx(1.5)
    assert model.b[0] == pytest.approx(1.5)


def test_zero_weight_fit():
    with pytest.raises(EmptyFitError):
        fit_weighted(WeightedPairs([[0.0]], [[1.0]], [0.0]), ModelKind.AFFINE)


def test_pairs_from_plan_and_trajectories():
    source = DiscreteMeasure([[0.0], [1.0]], [1.0, 1.0])
    target = DiscreteMeasure([[5.0], [6.0]], [1.0, 1.0])
    pairs = WeightedPairs.from_plan(np.array([[0.0, 1.0], [0.5, 0.5]]), source, target)
    assert pairs.w.tolist() == [1.0, 0.5, 0.5]
    assert pairs.y[:, 0].tolist() == [6.0, 5.0, 6.0]

    trajectories = np.arange(12, dtype=float).reshape(2, 3, 2)
    pairs = WeightedPairs.from_trajectories(trajectories)
    assert pairs.x.shape == (4, 2)
    assert pairs.total_weight == 4.0


def test_theta_and_records():
    model = AffineModel.affine([[1, 2], [3, 4]], [5, 6])
    assert model.theta.tolist() == [1, 2, 3, 4, 5, 6]
    assert np.array_equal(AffineModel.from_theta(model.theta, ModelKind.AFFINE, 2).A, model.A)

    restored = models_from_records(models_to_records([model, AffineModel.shift([0.5])]))
    assert np.array_equal(restored[0].A, model.A)
    assert restored[1].kind is ModelKind.SHIFT
    assert restored[1].b.tolist() == [0.5]
