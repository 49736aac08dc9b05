"""Dense linear algebra and random-number substrate.

Matrices are plain ``numpy.ndarray`` objects of dtype float64, row-major.
The heavy lifting is delegated to LAPACK through numpy/scipy; this module
adds the shape/finiteness contracts the rest of the package relies on.

Random numbers come from numpy's PCG64 bit generator.  Independent
sub-streams are derived with ``SeedSequence(seed, spawn_key=...)`` so that
data generation, weight initialisation and pair sampling can be replayed
separately.  Normal draws use numpy's ziggurat sampler.  PCG64 output and
the ziggurat tables are platform independent, so a given
``(seed, stream)`` yields the same bits everywhere.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf


class NotSPDError(np.linalg.LinAlgError):
    """Raised by :func:`solve_spd` when the Cholesky factorization breaks down."""

    def __init__(self, pivot: int):
        super().__init__(f"matrix is not SPD: non-positive pivot at index {pivot}")
        self.pivot = pivot


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """float64 2-D view of ``a``; rejects other ranks and non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return check_finite(m, name)


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def solve_spd(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` via Cholesky.

    ``b`` may be a vector or a matrix; the result has the same shape.
    Raises :class:`NotSPDError` carrying the (0-based) failing pivot.
    """
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"solve_spd needs a square matrix, got {a.shape}")
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"solve_spd dimension mismatch: {a.shape} vs {b.shape}")
    c, info = dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotSPDError(info - 1)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return cho_solve((c, True), b)


def eigh_symmetric(a, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Column ``k`` of the returned matrix is the eigenvector for eigenvalue ``k``.
    """
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"eigh_symmetric needs a square matrix, got {a.shape}")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > tol:
        raise ValueError(f"matrix is not symmetric (max |a - a^T| = {asym:.3g})")
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def _stream_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream ids must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` and the sub-stream ``stream``.

    Stream components may be non-negative ints or strings (hashed with CRC32),
    e.g. ``make_rng(7, "data", trial)``.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_stream_word(p) for p in stream))
    return np.random.Generator(np.random.PCG64(ss))
