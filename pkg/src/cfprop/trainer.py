"""Mini-batch training with pair-sampled propagation terms.

Each epoch visits the labeled training instances once in shuffled
``b1``-batches.  Every step additionally draws ``b2`` pairs for the outcome
term and, independently, ``b2`` pairs for the ITE term from the whole pool
(labeled and unlabeled).  The propagation terms are off for the first
``warmup_epochs`` and then decay geometrically.  The parameters of the epoch
with the lowest validation factual MSE are returned.

Random streams (all derived from ``cfg.seed``): ``"init"`` for weights,
``"batches"`` for the labeled-batch order and ``"pairs"`` for pair draws.
Pairs are drawn during warmup too, so the supervised trajectory never
depends on the propagation settings.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import build_graph, sample_pairs
from .model import AdamState, ArchSpec, TarnetParams, adam_step, forward, init_params
from .numcore import make_rng
from .objective import compute_scaling, total_objective


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lambda_o: float = 1.0
    lambda_e: float = 1.0
    sigma2: float = 1.0
    pca_dims: int = 4
    top_k: Optional[int] = None
    b1: int = 8
    b2: int = 32
    lr: float = 1e-3
    max_epochs: int = 300
    warmup_epochs: int = 10
    decay_rate: float = 0.99
    patience: int = 30
    loss_mode: str = "mean"
    arch: ArchSpec = field(default_factory=ArchSpec)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.arch, dict):
            object.__setattr__(self, "arch", ArchSpec(**self.arch))
        if self.lambda_o < 0 or self.lambda_e < 0:
            raise ValueError("lambda_o and lambda_e must be non-negative")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.pca_dims < 0:
            raise ValueError("pca_dims must be non-negative (0 disables PCA)")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be positive when set")
        if self.b1 < 1 or self.b2 < 1:
            raise ValueError("batch sizes must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.max_epochs < 1 or self.warmup_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1, warmup_epochs >= 0")
        if not 0.0 < self.decay_rate <= 1.0:
            raise ValueError("decay_rate must lie in (0, 1]")
        if self.loss_mode not in ("mean", "sum"):
            raise ValueError("loss_mode must be 'mean' or 'sum'")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = {k: list(v) for k, v in d["arch"].items()}
        return d


TRAIN_CONFIG_FIELDS = tuple(f.name for f in fields(TrainConfig))


def effective_lambdas(cfg: TrainConfig, epoch: int) -> tuple[float, float]:
    if epoch < cfg.warmup_epochs:
        return 0.0, 0.0
    s = cfg.decay_rate ** (epoch - cfg.warmup_epochs)
    return cfg.lambda_o * s, cfg.lambda_e * s


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_mse(self) -> float:
        return self.records[self.best_epoch]["val_mse"] if self.best_epoch >= 0 else math.inf

    def write_jsonl(self, path) -> None:
        with Path(path).open("w") as fh:
            for rec, wc in zip(self.records, self.wall_clock):
                fh.write(json.dumps({**rec, "wall_clock": wc}) + "\n")


def factual_mse(params: TarnetParams, view) -> float:
    lab = view.labeled
    pred, _ = forward(params, view.x[lab], view.t[lab])
    r = pred - view.y[lab]
    return float(r @ r) / len(r)


def train(train_view, val_view, cfg: TrainConfig, x_pool=None, log_path=None):
    """Fit the two-headed model; returns ``(best_params, history)``.

    ``x_pool`` defaults to the covariates of every instance of the training
    view's parent dataset, i.e. labeled plus unlabeled.
    """
    if x_pool is None:
        x_pool = train_view.parent.x
    x_pool = np.asarray(x_pool, dtype=np.float64)
    lab_idx = train_view.idx[train_view.labeled]
    if val_view.n == 0 or not np.any(val_view.labeled):
        raise ValueError("validation set must contain labeled instances")
    scaling = compute_scaling(train_view)
    x_lab = train_view.parent.x[lab_idx]
    t_lab = train_view.parent.t[lab_idx]
    y_lab = train_view.parent.y[lab_idx]
    n_lab = len(lab_idx)

    graph, _ = build_graph(x_pool, cfg.sigma2, cfg.pca_dims or None, cfg.top_k)
    params = init_params(x_pool.shape[1], cfg.arch, make_rng(cfg.seed, "init"))
    state = AdamState.create(params, lr=cfg.lr)
    rng_batch = make_rng(cfg.seed, "batches")
    rng_pairs = make_rng(cfg.seed, "pairs")

    history = TrainHistory()
    best_params = params.copy()
    best_mse = math.inf
    since_best = 0
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        lam_o, lam_e = effective_lambdas(cfg, epoch)
        order = rng_batch.permutation(n_lab)
        sums = np.zeros(4)
        steps = 0
        for step, s in enumerate(range(0, n_lab, cfg.b1)):
            b = order[s:s + cfg.b1]
            po = sample_pairs(rng_pairs, len(x_pool), cfg.b2, graph.edges)
            pe = sample_pairs(rng_pairs, len(x_pool), cfg.b2, graph.edges)
            bd, grads = total_objective(
                params, x_lab[b], t_lab[b], y_lab[b], x_pool, po, pe, graph, scaling, lam_o, lam_e, cfg.loss_mode
            )
            if not math.isfinite(bd.total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}: {bd}")
            try:
                adam_step(state, params, grads)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}, step {step}: {exc}; losses {bd}") from exc
            sums += (bd.ls, bd.lo, bd.le, bd.total)
            steps += 1
        val_mse = factual_mse(params, val_view)
        if not math.isfinite(val_mse):
            raise TrainingDiverged(f"non-finite validation MSE at epoch {epoch}")
        ls, lo, le, total = (sums / steps).tolist()
        history.records.append(
            {"epoch": epoch, "ls": ls, "lo": lo, "le": le, "total": total,
             "lambda_o": lam_o, "lambda_e": lam_e, "val_mse": val_mse}
        )
        history.wall_clock.append(time.perf_counter() - t0)
        if val_mse < best_mse:
            best_mse = val_mse
            best_params = params.copy()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if log_path is not None:
        history.write_jsonl(log_path)
    return best_params, history


def _grid_trial(args):
    train_view, val_view, cfg, x_pool = args
    try:
        _, hist = train(train_view, val_view, cfg, x_pool)
        return hist.best_val_mse
    except TrainingDiverged:
        return math.inf


def grid_search(train_view, val_view, base_cfg: TrainConfig, grids: dict, x_pool=None, workers: int = 1):
    """Exhaustive search over the product of ``grids`` (field name -> values).

    Selection: lowest best-epoch validation factual MSE, ties broken by
    smaller ``(lambda_o, lambda_e)`` and then by grid order.  Every grid
    point trains with ``base_cfg.seed``, so the outcome is independent of
    ``workers``.  Returns ``(best_cfg, [(cfg, val_mse), ...])``.
    """
    for k, vals in grids.items():
        if k not in TRAIN_CONFIG_FIELDS or k in ("seed", "arch"):
            raise ValueError(f"cannot grid over {k!r}")
        if not vals:
            raise ValueError(f"empty grid for {k!r}")
    keys = list(grids)
    cfgs = [replace(base_cfg, **dict(zip(keys, combo))) for combo in itertools.product(*(grids[k] for k in keys))]
    if not cfgs:
        cfgs = [base_cfg]
    jobs = [(train_view, val_view, c, x_pool) for c in cfgs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            scores = list(ex.map(_grid_trial, jobs))
    else:
        scores = [_grid_trial(j) for j in jobs]
    trials = list(zip(cfgs, scores))
    best = min(range(len(trials)), key=lambda k: (trials[k][1], cfgs[k].lambda_o, cfgs[k].lambda_e, k))
    return cfgs[best], trials


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("CFPROP_WORKERS", "1")))
    except ValueError:
        return 1
