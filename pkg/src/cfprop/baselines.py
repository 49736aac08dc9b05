"""Supervised ITE baselines: one- and two-model ridge, kNN matching, propensity matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import NotSPDError, solve_spd


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    bias: float
    ridge_lambda: float

    def predict(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias


def fit_ridge(x, y, ridge_lambda: float = 1.0) -> RidgeModel:
    """Closed-form ridge regression with an unpenalised intercept.

    Solves ``(Xc'Xc + lambda I) w = Xc'yc`` on centred data by Cholesky.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be non-negative")
    xm, ym = x.mean(axis=0), y.mean()
    xc, yc = x - xm, y - ym
    a = xc.T @ xc + ridge_lambda * np.eye(x.shape[1])
    try:
        w = solve_spd(a, xc.T @ yc)
    except NotSPDError as exc:
        raise ValueError(f"singular normal equations (collinear covariates with ridge_lambda={ridge_lambda})") from exc
    return RidgeModel(w, float(ym - xm @ w), ridge_lambda)


def _labeled_arms(train):
    lab = train.labeled
    x, t, y = train.x[lab], train.t[lab], train.y[lab]
    return x, t, y


def ridge1_ite(train, query_x, ridge_lambda: float = 1.0) -> np.ndarray:
    """One model on ``[x, t]``; the estimate is the treatment coefficient, the same for every query."""
    x, t, y = _labeled_arms(train)
    if not (np.any(t == 1) and np.any(t == 0)):
        raise ValueError("ridge1 needs both arms in the training data")
    model = fit_ridge(np.column_stack([x, t]), y, ridge_lambda)
    return np.full(len(query_x), model.weights[-1])


def ridge2_ite(train, query_x, ridge_lambda: float = 1.0) -> np.ndarray:
    x, t, y = _labeled_arms(train)
    for arm in (0, 1):
        if np.sum(t == arm) < 2:
            raise ValueError("ridge2 needs at least two labeled instances per arm")
    m1 = fit_ridge(x[t == 1], y[t == 1], ridge_lambda)
    m0 = fit_ridge(x[t == 0], y[t == 0], ridge_lambda)
    return m1.predict(query_x) - m0.predict(query_x)


def _match_mean(dist: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    # stable sort keeps the lower training index first among equal distances
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return y[nearest].mean(axis=1)


def _sq_dists(q, x, budget: int = 4_000_000):
    out = np.empty((len(q), len(x)))
    step = max(1, budget // max(1, x.size))
    for s in range(0, len(q), step):
        out[s:s + step] = np.sum((q[s:s + step, None, :] - x[None, :, :]) ** 2, axis=2)
    return out


def knn_ite(train, query_x, k: int = 5) -> np.ndarray:
    """Mean outcome of the k nearest treated minus that of the k nearest controls (Euclidean)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    x, t, y = _labeled_arms(train)
    q = np.asarray(query_x, dtype=np.float64)
    est = []
    for arm in (1, 0):
        m = t == arm
        if m.sum() < k:
            raise ValueError(f"arm t={arm} has {m.sum()} labeled instances, fewer than k={k}")
        est.append(_match_mean(_sq_dists(q, x[m]), y[m], k))
    return est[0] - est[1]


@dataclass(frozen=True)
class PropensityModel:
    weights: np.ndarray
    bias: float

    def predict(self, x) -> np.ndarray:
        z = np.asarray(x, dtype=np.float64) @ self.weights + self.bias
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(x, t, damping: float = 1e-6, tol: float = 1e-8, max_iter: int = 100) -> PropensityModel:
    """Logistic regression by damped Newton iterations with step halving.

    ``damping`` is an L2 penalty on the slopes (not the intercept).  Stops
    when the gradient norm drops below ``tol``.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n, d = x.shape
    xa = np.column_stack([x, np.ones(n)])
    pen = np.full(d + 1, damping)
    pen[-1] = 0.0
    beta = np.zeros(d + 1)
    pbar = np.clip(t.mean(), 1e-12, 1 - 1e-12)
    beta[-1] = np.log(pbar / (1 - pbar))

    def objective(b):
        z = xa @ b
        return float(np.sum(np.logaddexp(0.0, z) - t * z) + 0.5 * np.sum(pen * b * b))

    f = objective(beta)
    for _ in range(max_iter):
        p = 0.5 * (1.0 + np.tanh(0.5 * (xa @ beta)))
        grad = xa.T @ (p - t) + pen * beta
        if np.linalg.norm(grad) < tol:
            break
        hess = (xa * (p * (1 - p))[:, None]).T @ xa + np.diag(pen)
        hess += 1e-12 * np.eye(d + 1)
        try:
            step = solve_spd(hess, grad)
        except NotSPDError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        s = 1.0
        while s > 1e-10:
            cand = beta - s * step
            fc = objective(cand)
            if fc <= f:
                beta, f = cand, fc
                break
            s *= 0.5
        else:
            break
    return PropensityModel(beta[:-1].copy(), float(beta[-1]))


def psm_ite(train, query_x, k: int = 5, damping: float = 1e-6) -> np.ndarray:
    """kNN matching on the one-dimensional logistic propensity score."""
    if k < 1:
        raise ValueError("k must be at least 1")
    x, t, y = _labeled_arms(train)
    if not (np.any(t == 1) and np.any(t == 0)):
        raise ValueError("psm needs both arms in the training data")
    model = fit_logistic(x, t, damping=damping)
    e_train = model.predict(x)
    if np.any(e_train < 1e-12) or np.any(e_train > 1 - 1e-12):
        raise ValueError("propensities pinned at 0/1 (complete separation); refit with a larger damping")
    e_q = model.predict(query_x)
    est = []
    for arm in (1, 0):
        m = t == arm
        if m.sum() < k:
            raise ValueError(f"arm t={arm} has {m.sum()} labeled instances, fewer than k={k}")
        est.append(_match_mean(np.abs(e_q[:, None] - e_train[m][None, :]), y[m], k))
    return est[0] - est[1]
