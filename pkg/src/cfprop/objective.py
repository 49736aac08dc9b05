"""Supervised loss, outcome propagation and ITE propagation, with exact gradients.

All losses come in two normalisations: ``"mean"`` (divide by the number of
labeled instances / pairs in the batch; what the trainer optimises) and
``"sum"`` (raw sums, used by the brute-force equivalence checks).  The
propagation sums run over unordered pairs ``i < j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import SimilarityGraph
from .model import TarnetParams, backward, forward_both

VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class OutcomeScaling:
    """Per-term weights: alpha for the treated arm, beta for control, gamma for the ITE."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0


@dataclass(frozen=True)
class LossBreakdown:
    ls: float
    lo: float
    le: float
    total: float
    effective_lambda_o: float
    effective_lambda_e: float


def compute_scaling(train) -> OutcomeScaling:
    """Inverse (unbiased) outcome variances of the labeled training arms."""
    lab = train.labeled
    t, y = train.t[lab], train.y[lab]
    y1, y0 = y[t == 1], y[t == 0]
    if len(y1) < 2 or len(y0) < 2:
        raise ValueError(f"need >= 2 labeled instances per arm, got {len(y1)} treated / {len(y0)} control")
    v1 = max(float(np.var(y1, ddof=1)), VARIANCE_FLOOR)
    v0 = max(float(np.var(y0, ddof=1)), VARIANCE_FLOOR)
    return OutcomeScaling(1.0 / v1, 1.0 / v0, 1.0 / (v1 + v0))


def _norm(count: int, mode: str) -> float:
    if mode == "mean":
        return float(count)
    if mode == "sum":
        return 1.0
    raise ValueError(f"unknown normalisation mode {mode!r}")


def _supervised_terms(params, x, t, y, mode):
    out0, out1, cache = forward_both(params, x)
    t = np.asarray(t)
    r = np.where(t == 1, out1, out0) - y
    nrm = _norm(len(y), mode)
    ls = float(r @ r) / nrm
    g = 2.0 * r / nrm
    return ls, cache, np.where(t == 0, g, 0.0), np.where(t == 1, g, 0.0)


def supervised_loss_and_grad(params: TarnetParams, x, t, y, mode: str = "mean"):
    """Squared error of the factual head; returns ``(ls, grads)``."""
    ls, cache, g0, g1 = _supervised_terms(params, x, t, y, mode)
    return ls, backward(params, cache, g0, g1)


def _pair_outputs(params, x_pool, pairs):
    i, j = pairs[:, 0], pairs[:, 1]
    m = len(pairs)
    out0, out1, cache = forward_both(params, np.concatenate([x_pool[i], x_pool[j]]))
    return out0[:m], out0[m:], out1[:m], out1[m:], cache


def _outcome_terms(f0i, f0j, f1i, f1j, w, scaling, nrm):
    d1 = f1i - f1j
    d0 = f0i - f0j
    lo = float(np.sum(w * (scaling.alpha * d1 * d1 + scaling.beta * d0 * d0))) / nrm
    g1 = 2.0 * w * scaling.alpha * d1 / nrm
    g0 = 2.0 * w * scaling.beta * d0 / nrm
    # (d/d f_i, d/d f_j) per arm
    return lo, np.concatenate([g0, -g0]), np.concatenate([g1, -g1])


def _ite_terms(f0i, f0j, f1i, f1j, w, scaling, nrm):
    dt = (f1i - f0i) - (f1j - f0j)
    le = float(np.sum(w * scaling.gamma * dt * dt)) / nrm
    gt = 2.0 * w * scaling.gamma * dt / nrm
    return le, np.concatenate([-gt, gt]), np.concatenate([gt, -gt])


def outcome_prop_loss_and_grad(params, x_pool, pairs, graph: SimilarityGraph, scaling: OutcomeScaling, mode: str = "mean"):
    """sum_pairs w_ij [alpha (f(x_i,1)-f(x_j,1))^2 + beta (f(x_i,0)-f(x_j,0))^2]."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    f0i, f0j, f1i, f1j, cache = _pair_outputs(params, x_pool, pairs)
    w = graph.weights(pairs[:, 0], pairs[:, 1])
    lo, g0, g1 = _outcome_terms(f0i, f0j, f1i, f1j, w, scaling, _norm(len(pairs), mode))
    return lo, backward(params, cache, g0, g1)


def ite_prop_loss_and_grad(params, x_pool, pairs, graph: SimilarityGraph, scaling: OutcomeScaling, mode: str = "mean"):
    """sum_pairs w_ij gamma (tau_i - tau_j)^2 with tau = f(x,1) - f(x,0)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    f0i, f0j, f1i, f1j, cache = _pair_outputs(params, x_pool, pairs)
    w = graph.weights(pairs[:, 0], pairs[:, 1])
    le, g0, g1 = _ite_terms(f0i, f0j, f1i, f1j, w, scaling, _norm(len(pairs), mode))
    return le, backward(params, cache, g0, g1)


def total_objective(
    params: TarnetParams,
    x_lab,
    t_lab,
    y_lab,
    x_pool,
    pairs_o,
    pairs_e,
    graph: SimilarityGraph,
    scaling: OutcomeScaling,
    lambda_o: float,
    lambda_e: float,
    mode: str = "mean",
):
    """``Ls + lambda_o Lo + lambda_e Le`` and its gradient.

    ``pairs_o`` and ``pairs_e`` are drawn independently.  A term whose lambda
    is zero is still evaluated for reporting but contributes nothing to the
    gradient, which then equals the supervised gradient bit for bit.
    """
    ls, cache, g0, g1 = _supervised_terms(params, x_lab, t_lab, y_lab, mode)
    grads = backward(params, cache, g0, g1)

    pairs_o = np.asarray(pairs_o, dtype=np.int64).reshape(-1, 2)
    pairs_e = np.asarray(pairs_e, dtype=np.int64).reshape(-1, 2)
    mo = len(pairs_o)
    both = np.concatenate([pairs_o, pairs_e])
    f0i, f0j, f1i, f1j, pcache = _pair_outputs(params, x_pool, both)
    w = graph.weights(both[:, 0], both[:, 1])
    o, e = slice(0, mo), slice(mo, None)
    lo, go0, go1 = _outcome_terms(f0i[o], f0j[o], f1i[o], f1j[o], w[o], scaling, _norm(mo, mode))
    le, ge0, ge1 = _ite_terms(f0i[e], f0j[e], f1i[e], f1j[e], w[e], scaling, _norm(len(pairs_e), mode))

    if lambda_o != 0.0 or lambda_e != 0.0:
        # rows of the pair pass are laid out as [i of pairs_o, i of pairs_e, j of pairs_o, j of pairs_e]
        m = len(both)

        def interleave(go, ge):
            out = np.zeros(2 * m)
            half = len(go) // 2
            out[:mo] += lambda_o * go[:half]
            out[m:m + mo] += lambda_o * go[half:]
            halfe = len(ge) // 2
            out[mo:m] += lambda_e * ge[:halfe]
            out[m + mo:] += lambda_e * ge[halfe:]
            return out

        backward(params, pcache, interleave(go0, ge0), interleave(go1, ge1), grads)

    total = ls + lambda_o * lo + lambda_e * le
    return LossBreakdown(ls, lo, le, total, lambda_o, lambda_e), grads


def full_pairs(n: int) -> np.ndarray:
    """Every unordered pair ``i < j`` of ``n`` instances, lexicographic."""
    i, j = np.triu_indices(n, k=1)
    return np.stack([i, j], axis=1)
