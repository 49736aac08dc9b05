"""PCA pre-reduction, Gaussian-kernel similarities and pair sampling.

Weights are never materialised as an n x n matrix: ``w_ij`` is evaluated on
demand for the sampled pairs, O(k) per pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numcore import eigh_symmetric


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d, k), orthonormal columns
    explained_variance: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[1]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return z @ self.components.T + self.mean


def fit_pca(x, k: int) -> PcaModel:
    """Principal components of ``x`` from the eigen-decomposition of its sample covariance.

    Signs are fixed so that each component's largest-magnitude entry is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"PCA dimension k={k} outside [1, min(n-1, d)] = [1, {min(n - 1, d)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    vals, vecs = eigh_symmetric(0.5 * (cov + cov.T))
    comps = vecs[:, :k].copy()
    for c in range(k):
        if comps[np.argmax(np.abs(comps[:, c])), c] < 0:
            comps[:, c] = -comps[:, c]
    return PcaModel(mean, comps, np.maximum(vals[:k], 0.0))


@dataclass(frozen=True, eq=False)
class SimilarityGraph:
    """Gaussian-kernel graph over projected covariates ``z``.

    With ``top_k`` set, ``neighbors[i]`` lists up to ``top_k`` other instances
    by descending weight and ``edges`` is the union of those lists as
    ``i < j`` pairs; pair sampling is then restricted to ``edges``.
    """

    z: np.ndarray
    sigma2: float
    top_k: Optional[int] = None
    neighbors: Optional[np.ndarray] = None
    edges: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def weights(self, i, j) -> np.ndarray:
        diff = self.z[i] - self.z[j]
        return np.exp(-np.einsum("...k,...k->...", diff, diff) / self.sigma2)


def kernel_weight(g: SimilarityGraph, i: int, j: int) -> float:
    diff = g.z[i] - g.z[j]
    return float(np.exp(-float(diff @ diff) / g.sigma2))


def _neighbor_lists(z: np.ndarray, top_k: int, chunk: int = 512) -> np.ndarray:
    n = z.shape[0]
    k = min(top_k, n - 1)
    sq = np.einsum("ij,ij->i", z, z)
    out = np.empty((n, k), dtype=np.int64)
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        d2 = sq[s:e, None] + sq[None, :] - 2.0 * z[s:e] @ z.T
        d2[np.arange(e - s), np.arange(s, e)] = np.inf
        # stable sort on distance, ties resolved by lower index
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[s:e] = order
    return out


def build_graph(x, sigma2: float, pca_dims: Optional[int] = None, top_k: Optional[int] = None):
    """Project ``x`` (all instances, labeled and unlabeled) and build the graph.

    ``pca_dims`` of ``None``/0 skips PCA; values above ``min(n-1, d)`` are
    clipped to that bound.  Returns ``(graph, pca_model_or_None)``.
    """
    x = np.asarray(x, dtype=np.float64)
    pca = None
    z = x
    if pca_dims:
        k = min(int(pca_dims), x.shape[1], x.shape[0] - 1)
        pca = fit_pca(x, k)
        z = pca.transform(x)
    neighbors = edges = None
    if top_k:
        neighbors = _neighbor_lists(z, int(top_k))
        rows = np.repeat(np.arange(z.shape[0]), neighbors.shape[1])
        cols = neighbors.ravel()
        pairs = np.stack([np.minimum(rows, cols), np.maximum(rows, cols)], axis=1)
        edges = np.unique(pairs, axis=0)
    return SimilarityGraph(z, float(sigma2), top_k, neighbors, edges), pca


def sample_pairs(rng: np.random.Generator, n: int, b2: int, edges: Optional[np.ndarray] = None) -> np.ndarray:
    """Draw ``b2`` unordered pairs ``(i, j)``, ``i < j``, uniformly with replacement.

    Without ``edges`` the draw is over all n(n-1)/2 pairs; otherwise over the
    rows of ``edges``.  Returns an int array of shape (b2, 2).
    """
    if b2 < 1:
        raise ValueError("b2 must be at least 1")
    if edges is not None:
        return edges[rng.integers(0, len(edges), size=b2)]
    if n < 2:
        raise ValueError("need at least two instances to sample pairs")
    i = rng.integers(0, n, size=b2)
    j = rng.integers(0, n - 1, size=b2)
    j = j + (j >= i)
    return np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1)
