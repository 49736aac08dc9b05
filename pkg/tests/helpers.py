"""Shared oracles for the test-suite: finite differences and loop-based forward passes."""

import numpy as np

from cfprop.model import ArchSpec, init_params
from cfprop.numcore import make_rng


def tiny_params(d=3, widths=(5,), heads=(), seed=0):
    return init_params(d, ArchSpec(tuple(widths), tuple(heads)), make_rng(seed, "init"))


def fd_grads(loss, params, h=1e-5):
    """Central differences of ``loss()`` w.r.t. every entry of ``params`` (perturbed in place)."""
    out = []
    for a in params.arrays():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            fp = loss()
            a[idx] = old - h
            fm = loss()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_rel_err(analytic, numeric, floor=1e-12):
    """``max|a - n| / max(max|a|, max|n|)`` over the whole flattened gradient.

    A per-block ratio would be dominated by finite-difference round-off in
    blocks whose true gradient is ~0 (dead ReLU units, saturated heads).
    """
    a = np.concatenate([x.ravel() for x in analytic])
    n = np.concatenate([x.ravel() for x in numeric])
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), floor)
    return float(np.max(np.abs(a - n))) / scale


def loop_forward(params, x, arm):
    """Per-row, per-unit forward pass written without matrix products."""
    out = np.zeros(len(x))
    head = params.head1 if arm == 1 else params.head0
    for r, row in enumerate(np.asarray(x, dtype=float)):
        a = list(row)
        for w, b in params.shared:
            a = [max(0.0, sum(a[i] * w[i, j] for i in range(len(a))) + b[j]) for j in range(w.shape[1])]
        for k, (w, b) in enumerate(head):
            z = [sum(a[i] * w[i, j] for i in range(len(a))) + b[j] for j in range(w.shape[1])]
            a = z if k == len(head) - 1 else [max(0.0, v) for v in z]
        out[r] = a[0]
    return out
