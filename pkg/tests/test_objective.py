import math

import numpy as np
import pytest

from cfprop.data import Dataset, DatasetView
from cfprop.graph import SimilarityGraph, build_graph
from cfprop.model import TarnetParams, forward_both
from cfprop.objective import (
    OutcomeScaling,
    compute_scaling,
    full_pairs,
    ite_prop_loss_and_grad,
    outcome_prop_loss_and_grad,
    supervised_loss_and_grad,
    total_objective,
)
from helpers import fd_grads, max_rel_err, tiny_params


def labeled_view(t, y):
    n = len(t)
    ds = Dataset(np.zeros((n, 1)), np.array(t), np.array(y, dtype=float), np.ones(n, dtype=bool))
    return DatasetView(ds, np.arange(n))


def test_scaling_hand_values():
    s = compute_scaling(labeled_view([1, 1, 0, 0, 0], [0.0, 2.0, 1.0, 1.0, 1.0]))
    assert s.alpha == 0.5 and s.beta == 1e8
    assert s.gamma == 1.0 / (2.0 + 1e-8)


def test_scaling_unit_and_invariance(rng):
    y1 = rng.normal(size=20)
    y0 = rng.normal(size=30)
    y1 = (y1 - y1.mean()) / y1.std(ddof=1)
    y0 = (y0 - y0.mean()) / y0.std(ddof=1)
    t = [1] * 20 + [0] * 30
    y = np.concatenate([y1, y0])
    s = compute_scaling(labeled_view(t, y))
    assert abs(s.alpha - 1) < 1e-12 and abs(s.beta - 1) < 1e-12 and abs(s.gamma - 0.5) < 1e-12
    s10 = compute_scaling(labeled_view(t, 10 * y))
    assert abs(s10.alpha - s.alpha / 100) < 1e-12 and abs(s10.beta - s.beta / 100) < 1e-12


def test_scaling_needs_two_per_arm():
    with pytest.raises(ValueError, match="per arm"):
        compute_scaling(labeled_view([1, 0, 0], [1.0, 2.0, 3.0]))


def test_supervised_trivial_cases(rng):
    p = tiny_params(2, (3,)).zeros_like()
    x = rng.normal(size=(2, 2))
    ls, g = supervised_loss_and_grad(p, x, np.array([1, 0]), np.array([1.0, -1.0]), mode="sum")
    assert ls == 2.0
    p = tiny_params(2, (3,))
    o0, o1, _ = forward_both(p, x)
    ls, g = supervised_loss_and_grad(p, x, np.array([1, 0]), np.array([o1[0], o0[1]]))
    assert ls == 0.0 and all(np.all(a == 0) for a in g.arrays())


def const_params(c0, c1, d=2):
    # zero trunk, head biases give constant outputs
    return TarnetParams(
        shared=[[np.zeros((d, 2)), np.zeros(2)]],
        head0=[[np.zeros((2, 1)), np.array([c0])]],
        head1=[[np.zeros((2, 1)), np.array([c1])]],
    )


def test_outcome_prop_constant_model(rng):
    x = rng.normal(size=(5, 2))
    g, _ = build_graph(x, 1.0)
    lo, _ = outcome_prop_loss_and_grad(const_params(0.3, -1.2), x, full_pairs(5), g, OutcomeScaling(), "sum")
    assert lo == 0.0


def identity_net():
    # d=1: rep = relu(x), y1 = a1 * rep, y0 = a0 * rep
    return lambda a0, a1: TarnetParams(
        shared=[[np.array([[1.0]]), np.zeros(1)]],
        head0=[[np.array([[a0]]), np.zeros(1)]],
        head1=[[np.array([[a1]]), np.zeros(1)]],
    )


def test_outcome_prop_one_pair_hand_value():
    # x = (2, 0): arm-1 outputs 2 and 0 (diff 2), arm-0 outputs 0 and 0
    p = identity_net()(0.0, 1.0)
    x = np.array([[2.0], [0.0]])
    g = SimilarityGraph(np.zeros((2, 1)), 1.0)  # coincident z -> w = 1
    lo, _ = outcome_prop_loss_and_grad(p, x, np.array([[0, 1]]), g, OutcomeScaling(1.0, 1.0, 1.0), "sum")
    assert lo == 4.0


def test_ite_prop_cases(rng):
    sym = tiny_params(2, (4,))
    sym.head1 = [[w.copy(), b.copy()] for w, b in sym.head0]
    x = rng.normal(size=(4, 2))
    g, _ = build_graph(x, 1.0)
    le, _ = ite_prop_loss_and_grad(sym, x, full_pairs(4), g, OutcomeScaling(), "sum")
    assert le == 0.0
    # tau_i = 1, tau_j = 0 with w = e^-1
    p = identity_net()(0.0, 1.0)
    xx = np.array([[1.0], [0.0]])
    gg = SimilarityGraph(np.array([[0.0], [1.0]]), 1.0)
    le, _ = ite_prop_loss_and_grad(p, xx, np.array([[0, 1]]), gg, OutcomeScaling(1, 1, 1), "sum")
    assert abs(le - math.exp(-1)) < 1e-15


def fixture(rng, n=6, d=3):
    p = tiny_params(d, (4,), (3,), seed=5)
    for a in p.arrays():
        a += rng.normal(scale=0.3, size=a.shape)
    x = rng.normal(size=(n, d))
    t = np.array([1, 0, 1, 0, 1, 0])[:n]
    y = rng.normal(size=n)
    g, _ = build_graph(x, 2.0)
    return p, x, t, y, g, OutcomeScaling(0.7, 1.3, 0.4)


def test_lambda_zero_is_supervised_bitwise(rng):
    p, x, t, y, g, s = fixture(rng)
    pairs = full_pairs(6)
    bd, grads = total_objective(p, x, t, y, x, pairs, pairs, g, s, 0.0, 0.0)
    ls, gs = supervised_loss_and_grad(p, x, t, y)
    assert bd.total == ls == bd.ls
    assert all(np.array_equal(a, b) for a, b in zip(grads.arrays(), gs.arrays()))


def test_additivity_and_components(rng):
    p, x, t, y, g, s = fixture(rng)
    pairs = full_pairs(6)
    bd, grads = total_objective(p, x, t, y, x, pairs, pairs, g, s, 1.0, 1.0, "sum")
    ls, gs = supervised_loss_and_grad(p, x, t, y, "sum")
    lo, go = outcome_prop_loss_and_grad(p, x, pairs, g, s, "sum")
    le, ge = ite_prop_loss_and_grad(p, x, pairs, g, s, "sum")
    assert abs(bd.total - (ls + lo + le)) < 1e-12
    for a, b, c, d in zip(grads.arrays(), gs.arrays(), go.arrays(), ge.arrays()):
        assert np.allclose(a, b + c + d, atol=1e-12)


def test_mean_mode_is_sum_over_count(rng):
    p, x, t, y, g, s = fixture(rng)
    pairs = full_pairs(6)
    lo_sum, _ = outcome_prop_loss_and_grad(p, x, pairs, g, s, "sum")
    lo_mean, _ = outcome_prop_loss_and_grad(p, x, pairs, g, s, "mean")
    assert abs(lo_mean - lo_sum / 15) < 1e-14
    with pytest.raises(ValueError):
        outcome_prop_loss_and_grad(p, x, pairs, g, s, "avg")


def test_combined_gradient_fd(rng):
    p, x, t, y, g, s = fixture(rng)
    po, pe = full_pairs(6), full_pairs(6)[::2]

    def loss():
        return total_objective(p, x, t, y, x, po, pe, g, s, 0.8, 1.7)[0].total

    _, grads = total_objective(p, x, t, y, x, po, pe, g, s, 0.8, 1.7)
    assert max_rel_err(grads.arrays(), fd_grads(loss, p)) < 1e-5


def test_full_pairs_order():
    assert full_pairs(4).tolist() == [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]]
