import numpy as np
import pytest

from flexhb.surrogate import EPS_VAR, ForestModel, SurrogateError, loo_matrix, loo_means


def test_constant_target():
    rng = np.random.default_rng(0)
    X = rng.random((20, 3))
    y = np.full(20, 0.5)
    model = ForestModel.fit(X, y, seed=1)
    for x in rng.random((10, 3)):
        mean, var = model.predict(x)
        assert mean == 0.5
        assert var == pytest.approx(EPS_VAR)


def test_two_clusters_matches_nearest_neighbor_oracle():
    rng = np.random.default_rng(1)
    X = np.concatenate([rng.normal(0.0, 0.02, (10, 1)), rng.normal(1.0, 0.02, (10, 1))])
    y = np.array([0.0] * 10 + [1.0] * 10)
    model = ForestModel.fit(X, y, seed=2)
    mean, _ = model.predict([0.0])
    nn = y[np.argmin(np.abs(X[:, 0] - 0.0))]
    assert mean < 0.2
    assert abs(mean - nn) < 0.2


def test_fit_deterministic_given_seed():
    rng = np.random.default_rng(3)
    X, y = rng.random((30, 4)), rng.random(30)
    q = rng.random((50, 4))
    a = ForestModel.fit(X, y, seed=9)
    b = ForestModel.fit(X, y, seed=9)
    assert np.array_equal(a.predict_many(q)[0], b.predict_many(q)[0])
    assert np.array_equal(a.predict_many(q)[1], b.predict_many(q)[1])
    c = ForestModel.fit(X, y, seed=10)
    assert not np.array_equal(a.predict_many(q)[0], c.predict_many(q)[0])


def test_single_tree_variance_is_floor():
    rng = np.random.default_rng(4)
    X, y = rng.random((15, 2)), rng.random(15)
    model = ForestModel.fit(X, y, seed=0, n_trees=1)
    for x in rng.random((20, 2)):
        _, var = model.predict(x)
        assert var == EPS_VAR


def test_training_point_memorization_min_leaf_one():
    rng = np.random.default_rng(5)
    X = rng.random((25, 3))
    y = 3.0 * X[:, 0] - X[:, 1]
    model = ForestModel.fit(X, y, seed=7, min_leaf=1)
    mean, _ = model.predict_many(X)
    assert np.max(np.abs(mean - y)) < 1e-9


def test_variance_never_negative():
    rng = np.random.default_rng(6)
    X, y = rng.random((40, 3)), rng.random(40)
    model = ForestModel.fit(X, y, seed=3)
    _, var = model.predict_many(rng.random((10_000, 3)))
    assert np.all(var >= EPS_VAR)


def test_mean_within_training_target_range():
    rng = np.random.default_rng(7)
    for seed in range(5):
        X, y = rng.random((30, 2)), rng.normal(size=30)
        model = ForestModel.fit(X, y, seed=seed)
        mean, _ = model.predict_many(rng.random((500, 2)))
        assert mean.min() >= y.min() - 1e-12
        assert mean.max() <= y.max() + 1e-12


def test_insufficient_data_and_dimension_mismatch():
    with pytest.raises(SurrogateError):
        ForestModel.fit(np.zeros((1, 2)), np.zeros(1), seed=0)
    rng = np.random.default_rng(8)
    model = ForestModel.fit(rng.random((5, 2)), rng.random(5), seed=0)
    with pytest.raises(SurrogateError):
        model.predict([0.1, 0.2, 0.3])


def test_loo_identical_points():
    X = np.tile([[0.5, 0.5]], (3, 1))
    y = np.ones(3)
    assert np.allclose(loo_means(X, y, seed=0), 1.0)


def test_loo_linear_interior_monotone_and_boundary_exact():
    # Leaf-averaging LOO cannot be monotone at the edges: the model without
    # the smallest point predicts its neighbor's value. With memorizing trees
    # the interior is monotone and the boundary values are exactly the
    # neighbor targets.
    X = np.linspace(0.0, 1.0, 10).reshape(-1, 1)
    y = X[:, 0].copy()
    for seed in range(5):
        mus = loo_means(X, y, seed=seed, min_leaf=1)
        assert np.all(np.diff(mus[1:-1]) >= -1e-12)
        assert mus[0] == pytest.approx(y[1], abs=1e-12)
        assert mus[-1] == pytest.approx(y[-2], abs=1e-12)


def test_loo_requires_three_points():
    X = np.array([[0.0], [1.0]])
    with pytest.raises(SurrogateError):
        loo_means(X, np.array([0.0, 1.0]), seed=0)


def test_loo_matrix_rows_are_models_without_point():
    rng = np.random.default_rng(9)
    X, y = rng.random((8, 2)), rng.random(8)
    mat = loo_matrix(X, y, seed=4)
    assert mat.shape == (8, 8)
    mask = np.ones(8, dtype=bool)
    for j in (0, 3, 7):
        mask[j] = False
        direct = ForestModel.fit(X[mask], y[mask], seed=4).predict_many(X)[0]
        mask[j] = True
        assert np.array_equal(mat[j], direct)
