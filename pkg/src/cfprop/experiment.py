"""Trial runner behind the CLI: split, fit, evaluate, aggregate.

Every (trial, method) task is self-contained and seeded from
``(config seed, trial index)``, so results do not depend on the number of
workers or the order tasks finish in.  The neural methods of one trial share
their initialisation and sampling streams, which makes ``tarnet`` and
``cp`` with both lambdas at zero the same run.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baselines import knn_ite, psm_ite, ridge1_ite, ridge2_ite
from .config import ExperimentConfig
from .data import Dataset, SplitSpec, add_label_noise, gen_synthetic, load_csv, split, standardize
from .evaluation import (
    EvalReport,
    aggregate,
    evaluate_method,
    format_table,
    summary_to_json,
    write_reports_json,
    write_summary_csv,
)
from .model import predict_ite
from .numcore import make_rng
from .trainer import default_workers, factual_mse, grid_search, train

log = logging.getLogger(__name__)


def trial_seed(cfg: ExperimentConfig, trial: int) -> int:
    return int(make_rng(cfg.seed, "trial", trial).integers(0, 2**31 - 1))


_CSV_CACHE: dict = {}


def trial_dataset(cfg: ExperimentConfig, trial: int) -> Dataset:
    spec = cfg.dataset
    if spec.kind == "synthetic":
        return gen_synthetic(spec.n, spec.d, spec.noise_c, trial_seed(cfg, trial))
    key = (spec.path, spec.schema)
    if key not in _CSV_CACHE:
        _CSV_CACHE[key] = load_csv(spec.path, spec.schema, name=spec.name)
    return _CSV_CACHE[key]


def method_train_config(cfg: ExperimentConfig, method: str, seed: int):
    tc = replace(cfg.train, seed=seed)
    if method == "tarnet":
        return replace(tc, lambda_o=0.0, lambda_e=0.0)
    if method == "cp_lo0":
        return replace(tc, lambda_o=0.0)
    if method == "cp_le0":
        return replace(tc, lambda_e=0.0)
    return tc


def _fixed_grid(method: str, grid: dict) -> dict:
    # ablations keep their zeroed lambda out of the search
    grid = dict(grid)
    if method in ("tarnet", "cp_lo0"):
        grid.pop("lambda_o", None)
    if method in ("tarnet", "cp_le0"):
        grid.pop("lambda_e", None)
    return grid


def run_task(cfg: ExperimentConfig, trial: int, method: str, noise: float = 0.0) -> EvalReport:
    """Fit one method on one trial and score it."""
    seed = trial_seed(cfg, trial)
    ds = trial_dataset(cfg, trial)
    sp = split(ds, SplitSpec(cfg.split.train_fraction, cfg.split.val_fraction, cfg.split.test_fraction, seed))
    if noise > 0:
        ds = add_label_noise(ds, noise, seed, indices=sp.train.idx)
        sp = sp.rebase(ds)
    if cfg.standardize:
        tr, va, _, _ = standardize(sp.train, sp.val, sp.test)
    else:
        tr, va = sp.train, sp.val
    x_all = tr.parent.x
    extra = {}
    val_mse = math.nan
    if method in ("cp", "cp_lo0", "cp_le0", "tarnet"):
        tc = method_train_config(cfg, method, seed)
        grid = _fixed_grid(method, cfg.grids.get(method, {}))
        if grid:
            tc, trials = grid_search(tr, va, tc, grid)
            extra["selected"] = {k: getattr(tc, k) for k in grid}
        params, hist = train(tr, va, tc)
        tau_hat = predict_ite(params, x_all)
        val_mse = factual_mse(params, va)
        extra["best_epoch"] = hist.best_epoch
        extra["epochs"] = len(hist.records)
    elif method == "ridge1":
        tau_hat = ridge1_ite(tr, x_all, cfg.baselines.ridge_lambda)
    elif method == "ridge2":
        tau_hat = ridge2_ite(tr, x_all, cfg.baselines.ridge_lambda)
    elif method == "knn":
        tau_hat = knn_ite(tr, x_all, cfg.baselines.knn_k)
    elif method == "psm":
        tau_hat = psm_ite(tr, x_all, cfg.baselines.psm_k, cfg.baselines.psm_damping)
    else:
        raise ValueError(f"unknown method {method!r}")
    report = evaluate_method(tr.parent, sp, tau_hat, method, seed, val_mse)
    report.extra = extra
    return report


def _task(args):
    cfg, trial, method, noise = args
    try:
        return run_task(cfg, trial, method, noise), None
    except Exception as exc:  # recorded, surfaced by the caller
        return None, {"trial": trial, "method": method, "noise": noise,
                      "error": f"{type(exc).__name__}: {exc}", "traceback": traceback.format_exc()}


@dataclass
class RunResult:
    reports: list
    failures: list = field(default_factory=list)
    summary: Optional[object] = None

    @property
    def failed_methods(self) -> list:
        ok = {r.method for r in self.reports}
        return sorted({f["method"] for f in self.failures} - ok)


def run_trials(cfg: ExperimentConfig, noise: float = 0.0, workers: Optional[int] = None) -> RunResult:
    workers = default_workers() if workers is None else workers
    jobs = [(cfg, k, m, noise) for k in range(cfg.trials) for m in cfg.methods]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outs = list(ex.map(_task, jobs))
    else:
        outs = [_task(j) for j in jobs]
    reports = [r for r, _ in outs if r is not None]
    failures = [f for _, f in outs if f is not None]
    for f in failures:
        log.error("trial %d, method %s failed: %s", f["trial"], f["method"], f["error"])
    res = RunResult(reports, failures)
    # keep only trials every method completed, so pairing stays intact
    seeds_per_method = {}
    for r in reports:
        seeds_per_method.setdefault(r.method, set()).add(r.trial_seed)
    if seeds_per_method:
        common = set.intersection(*seeds_per_method.values())
        paired = [r for r in reports if r.trial_seed in common]
        if paired:
            res.summary = aggregate(paired, reference=cfg.reference)
    return res


def _manifest(cfg: ExperimentConfig, extra: Optional[dict] = None) -> dict:
    return {
        "config_sha256": cfg.digest(),
        "trial_seeds": [trial_seed(cfg, k) for k in range(cfg.trials)],
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "created_unix": int(time.time()),
        **(extra or {}),
    }


def write_run_outputs(cfg: ExperimentConfig, res: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.to_yaml())
    write_reports_json(res.reports, out / "reports.json")
    if res.summary is not None:
        write_summary_csv(res.summary, out / "summary.csv", cfg.split.train_fraction)
        (out / "summary.json").write_text(json.dumps(summary_to_json(res.summary), indent=1, sort_keys=True))
        (out / "table.txt").write_text(format_table(res.summary) + "\n")
    (out / "failures.json").write_text(json.dumps(res.failures, indent=1))
    (out / "MANIFEST.json").write_text(json.dumps(_manifest(cfg, {"n_failures": len(res.failures)}), indent=1, sort_keys=True))
    return out


def noise_level_config(cfg: ExperimentConfig, c: float) -> tuple[ExperimentConfig, float]:
    """Config and additive training-noise scale for noise level ``c``."""
    if cfg.resolved_noise_mode() == "generator":
        return replace(cfg, dataset=replace(cfg.dataset, noise_c=float(c))), 0.0
    return cfg, float(c)


def run_noise(cfg: ExperimentConfig, workers: Optional[int] = None) -> dict:
    out = {}
    for c in cfg.noise_levels:
        level_cfg, added = noise_level_config(cfg, c)
        out[c] = run_trials(level_cfg, noise=added, workers=workers)
    return out


def write_noise_outputs(cfg: ExperimentConfig, results: dict, out_dir) -> Path:
    """Per-level run directories plus ``noise_summary.csv`` in long format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "noise_summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "c", "partition", "mean", "sd", f"p_vs_{cfg.reference}"])
        for c, res in results.items():
            write_run_outputs(noise_level_config(cfg, c)[0], res, out / f"c_{c:g}")
            if res.summary is None:
                continue
            for r in res.summary.rows:
                w.writerow([r.method, repr(float(c)), r.partition, repr(r.mean),
                            "" if r.sd is None else repr(r.sd), "" if r.p_vs_ref is None else repr(r.p_vs_ref)])
    (out / "MANIFEST.json").write_text(json.dumps(_manifest(cfg, {"noise_levels": list(results)}), indent=1, sort_keys=True))
    return out
