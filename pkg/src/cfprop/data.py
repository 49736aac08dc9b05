"""Datasets: the synthetic generator, CSV ingestion, splitting and preprocessing."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .numcore import eigh_symmetric, make_rng

PSD_EIG_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class Dataset:
    """Covariates plus (partially observed) treatment/outcome labels.

    ``t`` holds 0/1 for labeled instances and -1 elsewhere, ``y`` holds the
    factual outcome for labeled instances and NaN elsewhere.  ``mu0``/``mu1``
    are the noiseless potential-outcome means when ground truth is known.
    """

    x: np.ndarray
    t: np.ndarray
    y: np.ndarray
    labeled: np.ndarray
    mu0: Optional[np.ndarray] = None
    mu1: Optional[np.ndarray] = None
    name: str = "dataset"

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"x must be 2-D, got shape {x.shape}")
        n = x.shape[0]
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        labeled = np.asarray(self.labeled, dtype=bool).reshape(-1)
        if not (len(t) == len(y) == len(labeled) == n):
            raise ValueError("x, t, y and labeled must have the same number of rows")
        if np.any((t[labeled] != 0) & (t[labeled] != 1)):
            raise ValueError("treatment must be 0 or 1 on labeled instances")
        if np.any(t[~labeled] != -1) or not np.all(np.isnan(y[~labeled])):
            raise ValueError("unlabeled instances must carry t=-1 and y=NaN")
        if not np.all(np.isfinite(y[labeled])):
            raise ValueError("labeled outcomes must be finite")
        if (self.mu0 is None) != (self.mu1 is None):
            raise ValueError("mu0 and mu1 must be given together")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "labeled", labeled)
        if self.mu0 is not None:
            mu0 = np.asarray(self.mu0, dtype=np.float64).reshape(-1)
            mu1 = np.asarray(self.mu1, dtype=np.float64).reshape(-1)
            if len(mu0) != n or len(mu1) != n:
                raise ValueError("mu0/mu1 must cover every instance")
            object.__setattr__(self, "mu0", mu0)
            object.__setattr__(self, "mu1", mu1)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.mu0 is not None

    @property
    def tau(self) -> np.ndarray:
        if self.mu0 is None:
            raise ValueError(f"dataset {self.name!r} has no ground-truth potential outcomes")
        return self.mu1 - self.mu0

    def with_x(self, x: np.ndarray) -> "Dataset":
        return replace(self, x=x)

    def with_y(self, y: np.ndarray) -> "Dataset":
        return replace(self, y=y)


@dataclass(frozen=True, eq=False)
class DatasetView:
    """A subset of a parent :class:`Dataset`, addressed by row indices."""

    parent: Dataset
    idx: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "idx", np.asarray(self.idx, dtype=np.int64))

    @property
    def n(self) -> int:
        return len(self.idx)

    @property
    def x(self) -> np.ndarray:
        return self.parent.x[self.idx]

    @property
    def t(self) -> np.ndarray:
        return self.parent.t[self.idx]

    @property
    def y(self) -> np.ndarray:
        return self.parent.y[self.idx]

    @property
    def labeled(self) -> np.ndarray:
        return self.parent.labeled[self.idx]

    @property
    def tau(self) -> np.ndarray:
        return self.parent.tau[self.idx]

    def rebase(self, parent: Dataset) -> "DatasetView":
        if parent.n != self.parent.n:
            raise ValueError("new parent has a different number of instances")
        return DatasetView(parent, self.idx)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.1
    val_fraction: float = 0.1
    test_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if min(fr) < 0.0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fr}")


@dataclass(frozen=True)
class Split:
    train: DatasetView
    val: DatasetView
    test: DatasetView

    @property
    def unlabeled_idx(self) -> np.ndarray:
        """Instances whose labels the trainer never sees (val and test)."""
        return np.concatenate([self.val.idx, self.test.idx])

    def rebase(self, parent: Dataset) -> "Split":
        return Split(self.train.rebase(parent), self.val.rebase(parent), self.test.rebase(parent))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def psd_repair(cov: np.ndarray, floor: float = PSD_EIG_FLOOR) -> np.ndarray:
    """Clip the eigenvalues of a symmetric matrix at ``floor`` and rebuild it."""
    vals, vecs = eigh_symmetric(cov)
    vals = np.maximum(vals, floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def gen_synthetic(n: int = 1000, d: int = 8, noise_c: float = 1.0, seed: int = 0) -> Dataset:
    """Sample the synthetic benchmark.

    x ~ N(0, S) with S the PSD-repaired symmetrisation of a U(-1,1) matrix,
    t ~ Bern(sigmoid(w_t.x + e_t)) with e_t ~ N(0, 0.1) (variance 0.1),
    mu1 = sin(w_y.x), mu0 = cos(w_y.x) and y = mu_t + noise_c * N(0, 1).
    Every instance comes back labeled; splitting decides the unlabeled pool.
    """
    if n < 2 or d < 1:
        raise ValueError(f"gen_synthetic needs n >= 2 and d >= 1, got n={n}, d={d}")
    if noise_c < 0:
        raise ValueError("noise_c must be non-negative")
    rng = make_rng(seed, "synthetic")
    sigma = rng.uniform(-1.0, 1.0, size=(d, d))
    vals, vecs = eigh_symmetric(0.5 * (sigma + sigma.T))
    root = vecs * np.sqrt(np.maximum(vals, PSD_EIG_FLOOR))
    x = rng.standard_normal((n, d)) @ root.T
    w_t = rng.uniform(-1.0, 1.0, size=d)
    eps_t = rng.normal(0.0, math.sqrt(0.1), size=n)
    t = (rng.uniform(size=n) < _sigmoid(x @ w_t + eps_t)).astype(np.int64)
    w_y = rng.uniform(-1.0, 1.0, size=d)
    h = x @ w_y
    mu1 = np.sin(h)
    mu0 = np.cos(h)
    eps_y = rng.standard_normal(n)
    y = np.where(t == 1, mu1, mu0) + noise_c * eps_y
    return Dataset(x=x, t=t, y=y, labeled=np.ones(n, dtype=bool), mu0=mu0, mu1=mu1, name="synthetic")


@dataclass(frozen=True)
class CsvSchema:
    """Column layout of an ingestible CSV file.

    Covariates are either listed explicitly (``covariates``) or selected by
    name prefix (``covariate_prefix``), in file order.  Empty treatment and
    outcome cells mark an unlabeled row.
    """

    covariates: Optional[tuple[str, ...]] = None
    covariate_prefix: Optional[str] = "x"
    treatment: str = "t"
    outcome: str = "y"
    mu0: Optional[str] = "mu0"
    mu1: Optional[str] = "mu1"

    def resolve_covariates(self, header: Sequence[str]) -> list[str]:
        if self.covariates:
            return list(self.covariates)
        if not self.covariate_prefix:
            raise ValueError("schema needs covariates or a covariate_prefix")
        reserved = {self.treatment, self.outcome, self.mu0, self.mu1}
        cols = [h for h in header if h.startswith(self.covariate_prefix) and h not in reserved]
        if not cols:
            raise ValueError(f"no columns with prefix {self.covariate_prefix!r}")
        return cols


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ValueError(f"row {row}, column {col!r}: non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def load_csv(path, schema: CsvSchema = CsvSchema(), name: Optional[str] = None) -> Dataset:
    """Read a UTF-8 comma-separated file with a header row into a Dataset.

    ``mu0``/``mu1`` are read only when the schema names them and the header
    has both columns; a declared-but-missing column is an error unless the
    schema uses the default names, in which case ground truth is simply absent.
    Row numbers in error messages count data rows from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    pos = {h: k for k, h in enumerate(header)}
    cov = schema.resolve_covariates(header)
    required = cov + [schema.treatment, schema.outcome]
    for col in required:
        if col not in pos:
            raise ValueError(f"{path}: missing column {col!r}")
    truth_cols = [c for c in (schema.mu0, schema.mu1) if c]
    defaults = schema.mu0 == "mu0" and schema.mu1 == "mu1"
    if truth_cols and not all(c in pos for c in truth_cols):
        if not defaults:
            missing = [c for c in truth_cols if c not in pos]
            raise ValueError(f"{path}: missing column {missing[0]!r}")
        truth_cols = []
    use_truth = len(truth_cols) == 2

    n = len(rows)
    x = np.empty((n, len(cov)))
    t = np.full(n, -1, dtype=np.int64)
    y = np.full(n, np.nan)
    labeled = np.zeros(n, dtype=bool)
    mu0 = np.empty(n) if use_truth else None
    mu1 = np.empty(n) if use_truth else None
    for r, row in enumerate(rows):
        rownum = r + 1
        if len(row) != len(header):
            raise ValueError(f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}")
        for k, col in enumerate(cov):
            x[r, k] = _parse_float(row[pos[col]], rownum, col)
        tcell = row[pos[schema.treatment]].strip()
        ycell = row[pos[schema.outcome]].strip()
        if tcell == "" and ycell == "":
            pass
        elif tcell == "" or ycell == "":
            raise ValueError(f"{path}: row {rownum}: treatment and outcome must be both present or both empty")
        else:
            tv = _parse_float(tcell, rownum, schema.treatment)
            if tv not in (0.0, 1.0):
                raise ValueError(f"{path}: row {rownum}, column {schema.treatment!r}: treatment must be 0 or 1, got {tcell!r}")
            t[r] = int(tv)
            y[r] = _parse_float(ycell, rownum, schema.outcome)
            labeled[r] = True
        if use_truth:
            mu0[r] = _parse_float(row[pos[schema.mu0]], rownum, schema.mu0)
            mu1[r] = _parse_float(row[pos[schema.mu1]], rownum, schema.mu1)
    return Dataset(x=x, t=t, y=y, labeled=labeled, mu0=mu0, mu1=mu1, name=name or path.stem)


def write_csv(ds: Dataset, path, prefix: str = "x") -> None:
    """Write ``ds`` in the layout :func:`load_csv` reads with the default schema.

    Floats are written with ``repr`` so the file round-trips exactly.
    """
    header = [f"{prefix}{k + 1}" for k in range(ds.d)] + ["t", "y"]
    if ds.has_truth:
        header += ["mu0", "mu1"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.x[i]]
            if ds.labeled[i]:
                row += [str(int(ds.t[i])), repr(float(ds.y[i]))]
            else:
                row += ["", ""]
            if ds.has_truth:
                row += [repr(float(ds.mu0[i])), repr(float(ds.mu1[i]))]
            w.writerow(row)


def split(ds: Dataset, spec: SplitSpec, max_retries: int = 100) -> Split:
    """Seeded train/val/test partition.

    The train part must hold at least one labeled treated and one labeled
    control instance; the permutation is redrawn until it does.
    """
    n = ds.n
    n_train = int(round(n * spec.train_fraction))
    n_val = int(round(n * spec.val_fraction))
    if n_train < 2:
        raise ValueError(f"training split too small: {n_train} instances")
    if n_train + n_val > n:
        n_val = n - n_train
    rng = make_rng(spec.seed, "split")
    for _ in range(max_retries):
        perm = rng.permutation(n)
        tr = perm[:n_train]
        lab = ds.labeled[tr]
        tt = ds.t[tr][lab]
        if np.any(tt == 1) and np.any(tt == 0):
            va = perm[n_train:n_train + n_val]
            te = perm[n_train + n_val:]
            return Split(DatasetView(ds, tr), DatasetView(ds, va), DatasetView(ds, te))
    raise ValueError(f"could not draw a training split with both arms after {max_retries} retries")


def add_label_noise(ds: Dataset, c: float, seed: int, indices=None) -> Dataset:
    """Add N(0, c^2) noise to labeled outcomes (restricted to ``indices`` if given).

    One draw is made per instance regardless of ``indices``, so the noise an
    instance receives does not depend on which other instances are selected.
    """
    if c < 0:
        raise ValueError("noise scale c must be non-negative")
    if c == 0:
        return ds
    eps = make_rng(seed, "label-noise").normal(0.0, c, size=ds.n)
    mask = ds.labeled.copy()
    if indices is not None:
        sel = np.zeros(ds.n, dtype=bool)
        sel[np.asarray(indices, dtype=np.int64)] = True
        mask &= sel
    y = ds.y.copy()
    y[mask] += eps[mask]
    return ds.with_y(y)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        if x.shape[0] == 0:
            raise ValueError("cannot standardize with an empty training set")
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        return cls(mean, std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def standardize(train, *others):
    """Rescale covariates with statistics of ``train`` only.

    Accepts Datasets and DatasetViews; views sharing a parent are rebased on a
    single transformed copy of that parent.  Returns ``(train', *others',
    standardizer)``.  Apply exactly once: the transform is not idempotent.
    """
    st = Standardizer.fit(train.x)
    cache: dict[int, Dataset] = {}

    def conv(obj):
        if isinstance(obj, DatasetView):
            key = id(obj.parent)
            if key not in cache:
                cache[key] = obj.parent.with_x(st.transform(obj.parent.x))
            return obj.rebase(cache[key])
        return obj.with_x(st.transform(obj.x))

    return (conv(train), *(conv(o) for o in others), st)
