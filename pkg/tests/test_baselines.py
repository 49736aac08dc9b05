import numpy as np
import pytest

from cfprop.baselines import fit_logistic, fit_ridge, knn_ite, psm_ite, ridge1_ite, ridge2_ite
from cfprop.data import Dataset, DatasetView


def view(x, t, y):
    x = np.asarray(x, dtype=float).reshape(len(t), -1)
    ds = Dataset(x, np.asarray(t), np.asarray(y, dtype=float), np.ones(len(t), dtype=bool))
    return DatasetView(ds, np.arange(len(t)))


def normal_eq_oracle(x, y, lam):
    xa = np.column_stack([x, np.ones(len(x))])
    pen = lam * np.eye(xa.shape[1])
    pen[-1, -1] = 0.0
    coef = np.linalg.inv(xa.T @ xa + pen) @ xa.T @ y
    return coef[:-1], coef[-1]


def test_ridge_vs_normal_equations(rng):
    x = rng.normal(size=(40, 5))
    y = x @ rng.normal(size=5) + 0.3 + rng.normal(scale=0.1, size=40)
    for lam in (0.0, 0.5, 10.0):
        m = fit_ridge(x, y, lam)
        w, b = normal_eq_oracle(x, y, lam)
        assert np.max(np.abs(m.weights - w)) < 1e-8 and abs(m.bias - b) < 1e-8


def test_ridge_collinear_zero_lambda():
    x = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(ValueError, match="singular"):
        fit_ridge(x, np.arange(5.0), 0.0)


def test_ridge1_planted(rng):
    x = rng.normal(size=(60, 3))
    t = rng.integers(0, 2, size=60)
    y = 2 * t + x @ np.array([0.5, -1.0, 0.2])
    tr = view(x, t, y)
    est = ridge1_ite(tr, rng.normal(size=(7, 3)), ridge_lambda=1e-10)
    assert np.all(est == est[0]) and abs(est[0] - 2.0) < 1e-6
    assert abs(ridge1_ite(tr, x[:2], ridge_lambda=1e12)[0]) < 1e-6


def test_ridge2_planted_and_identical_arms(rng):
    x = rng.normal(size=(60, 3))
    t = np.array([0, 1] * 30)
    a1, a0 = np.array([1.0, 2.0, -1.0]), np.array([0.5, 0.0, 1.0])
    y = np.where(t == 1, x @ a1, x @ a0)
    q = rng.normal(size=(9, 3))
    assert np.max(np.abs(ridge2_ite(view(x, t, y), q, 1e-10) - q @ (a1 - a0))) < 1e-6
    xx = np.concatenate([x[:30], x[:30]])
    yy = np.concatenate([y[:30], y[:30]])
    tt = np.array([1] * 30 + [0] * 30)
    assert np.max(np.abs(ridge2_ite(view(xx, tt, yy), q, 1.0))) < 1e-12


def test_knn_trivial():
    tr = view([[0.0], [0.1]], [1, 0], [1.0, 0.0])
    assert knn_ite(tr, np.array([[0.0]]), k=1).tolist() == [1.0]
    tr = view([[0.0], [5.0], [0.3], [4.0]], [1, 1, 0, 0], [7.0, -3.0, 2.0, 9.0])
    assert knn_ite(tr, np.array([[5.0]]), k=1)[0] == -3.0 - 9.0


def test_knn_vs_exhaustive_sort(rng):
    x = rng.normal(size=(20, 2))
    t = np.array([0, 1] * 10)
    y = rng.normal(size=20)
    q = rng.normal(size=(6, 2))
    got = knn_ite(view(x, t, y), q, k=3)
    for r, qq in enumerate(q):
        est = []
        for arm in (1, 0):
            cand = sorted((float(np.sum((x[i] - qq) ** 2)), i) for i in range(20) if t[i] == arm)
            est.append(np.mean([y[i] for _, i in cand[:3]]))
        assert got[r] == pytest.approx(est[0] - est[1], abs=1e-15)
    with pytest.raises(ValueError, match="fewer than k"):
        knn_ite(view(x, t, y), q, k=11)


def test_logistic_intercept_only_oracle():
    # the same assignment pattern at x=-1 and x=+1: slope 0, intercept logit(p)
    pattern = np.array([1, 1, 0, 1, 0, 1, 1, 0, 1, 1] * 2)
    t = np.concatenate([pattern, pattern])
    x = np.array([[-1.0]] * 20 + [[1.0]] * 20)
    m = fit_logistic(x, t)
    p = t.mean()
    assert abs(m.bias - np.log(p / (1 - p))) < 1e-6
    assert abs(m.weights[0]) < 1e-6


def test_logistic_matches_newton_oracle(rng):
    x = rng.normal(size=(200, 3))
    t = (rng.uniform(size=200) < 1 / (1 + np.exp(-(x @ [1.0, -0.5, 0.2] + 0.3)))).astype(int)
    m = fit_logistic(x, t, damping=0.0)
    p = m.predict(x)
    grad = np.column_stack([x, np.ones(200)]).T @ (p - t)
    assert np.max(np.abs(grad)) < 1e-6
    assert np.all((p > 0) & (p < 1))


def test_psm_randomised_assignment_close_to_mean_difference(rng):
    n = 2000
    x = rng.normal(size=(n, 2))
    t = rng.integers(0, 2, size=n)
    y = 1.5 * t + 0.3 * x[:, 0] + rng.normal(scale=0.5, size=n)
    est = psm_ite(view(x, t, y), x, k=5)
    naive = y[t == 1].mean() - y[t == 0].mean()
    assert abs(est.mean() - naive) < 0.1


def test_psm_separation_error():
    x = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
    t = np.array([0, 0, 0, 1, 1, 1])
    with pytest.raises(ValueError, match="separation"):
        psm_ite(view(x, t, np.zeros(6)), x, k=1, damping=0.0)
