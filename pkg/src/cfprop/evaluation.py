"""PEHE scoring, trial aggregation and the paired t-test."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

PARTITIONS = ("labeled", "unlabeled")


def pehe(true_tau, est_tau) -> float:
    """Mean squared ITE error (callers take the square root for reporting)."""
    a = np.asarray(true_tau, dtype=np.float64).ravel()
    b = np.asarray(est_tau, dtype=np.float64).ravel()
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} true vs {len(b)} estimated effects")
    if len(a) == 0:
        raise ValueError("pehe needs at least one instance")
    r = a - b
    return float(r @ r) / len(r)


@dataclass
class EvalReport:
    method: str
    trial_seed: int
    sqrt_pehe_labeled: float
    sqrt_pehe_unlabeled: float
    factual_mse_val: float
    n_labeled: int
    n_unlabeled: int
    extra: dict = field(default_factory=dict)

    def score(self, partition: str) -> float:
        return self.sqrt_pehe_labeled if partition == "labeled" else self.sqrt_pehe_unlabeled

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def evaluate_method(dataset, split, tau_hat, method: str, trial_seed: int, factual_mse_val: float = math.nan) -> EvalReport:
    """Root-PEHE over the training (labeled) indices and over val+test (unlabeled)."""
    if not dataset.has_truth:
        raise ValueError(f"dataset {dataset.name!r} has no ground-truth potential outcomes")
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    if len(tau_hat) != dataset.n:
        raise ValueError("tau_hat must cover every instance")
    tau = dataset.tau
    lab = split.train.idx
    unl = split.unlabeled_idx
    return EvalReport(
        method=method,
        trial_seed=int(trial_seed),
        sqrt_pehe_labeled=math.sqrt(pehe(tau[lab], tau_hat[lab])),
        sqrt_pehe_unlabeled=math.sqrt(pehe(tau[unl], tau_hat[unl])) if len(unl) else math.nan,
        factual_mse_val=float(factual_mse_val),
        n_labeled=len(lab),
        n_unlabeled=len(unl),
    )


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 1e-15) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(lbt) * _betacf(a, b, x) / a
    return 1.0 - math.exp(lbt) * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t: I_{df/(df+t^2)}(df/2, 1/2)."""
    if math.isinf(t):
        return 0.0
    return betainc_reg(0.5 * df, 0.5, df / (df + t * t))


class TTestResult(NamedTuple):
    t: float
    p: float
    df: int
    degenerate: bool = False


def paired_t_test(a, b) -> TTestResult:
    """Paired t-test on ``a - b``.

    All-zero differences give ``t=0, p=1``; constant non-zero differences
    (zero variance) give ``t=+-inf, p=0`` with ``degenerate=True``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, n - 1, False)
        return TTestResult(math.copysign(math.inf, mean), 0.0, n - 1, True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, t_two_sided_p(t, n - 1), n - 1, False)


@dataclass
class SummaryRow:
    method: str
    partition: str
    mean: float
    sd: Optional[float]
    n_trials: int
    t_vs_ref: Optional[float] = None
    p_vs_ref: Optional[float] = None


@dataclass
class TrialSummary:
    reference: str
    rows: list

    def row(self, method: str, partition: str) -> SummaryRow:
        for r in self.rows:
            if r.method == method and r.partition == partition:
                return r
        raise KeyError((method, partition))

    def mean(self, method: str, partition: str = "unlabeled") -> float:
        return self.row(method, partition).mean


def aggregate(reports, reference: str = "cp") -> TrialSummary:
    """Mean and sample sd of root-PEHE per method and partition, plus paired tests vs ``reference``.

    With a single trial the sd is reported as unavailable (None).  Trial seeds
    must match across methods, otherwise pairing is undefined.
    """
    by_method: dict[str, dict[int, EvalReport]] = {}
    for r in reports:
        by_method.setdefault(r.method, {})[r.trial_seed] = r
    if not by_method:
        raise ValueError("no reports to aggregate")
    seed_sets = {m: sorted(v) for m, v in by_method.items()}
    first = next(iter(seed_sets.values()))
    for m, s in seed_sets.items():
        if s != first:
            raise ValueError(f"unmatched trial seeds for method {m!r}: pairing broken")
    rows = []
    for m in by_method:
        for part in PARTITIONS:
            vals = np.array([by_method[m][s].score(part) for s in first])
            sd = float(vals.std(ddof=1)) if len(vals) > 1 else None
            row = SummaryRow(m, part, float(vals.mean()), sd, len(vals))
            if m != reference and reference in by_method and len(vals) > 1:
                ref = np.array([by_method[reference][s].score(part) for s in first])
                res = paired_t_test(vals, ref)
                row.t_vs_ref, row.p_vs_ref = res.t, res.p
            rows.append(row)
    return TrialSummary(reference, rows)


def format_cell(mean: float, sd: Optional[float], digits: int = 3) -> str:
    """``0.307_{±0.125}`` layout; a missing sd prints as ``n/a``."""
    sd_txt = "n/a" if sd is None else f"{sd:.{digits}f}"
    return f"{mean:.{digits}f}_{{±{sd_txt}}}"


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_summary_csv(summary: TrialSummary, path, fraction: float, extra_cols: Optional[dict] = None) -> None:
    """Columns: [extra...], method, fraction, partition, mean, sd, p_vs_cp."""
    extra_cols = extra_cols or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(extra_cols) + ["method", "fraction", "partition", "mean", "sd", f"p_vs_{summary.reference}"])
        for r in summary.rows:
            w.writerow(list(extra_cols.values()) + [r.method, repr(float(fraction)), r.partition, _fmt(r.mean), _fmt(r.sd), _fmt(r.p_vs_ref)])


def summary_to_json(summary: TrialSummary) -> dict:
    return {"reference": summary.reference, "rows": [asdict(r) for r in summary.rows]}


def format_table(summary: TrialSummary, digits: int = 3) -> str:
    """Plain-text table, one line per method, labeled and unlabeled columns."""
    methods = list(dict.fromkeys(r.method for r in summary.rows))
    lines = [f"{'method':<10} {'labeled':>22} {'unlabeled':>22}"]
    for m in methods:
        cells = []
        for part in PARTITIONS:
            r = summary.row(m, part)
            mark = "*" if r.p_vs_ref is not None and r.p_vs_ref < 0.05 else ""
            cells.append(mark + format_cell(r.mean, r.sd, digits))
        lines.append(f"{m:<10} {cells[0]:>22} {cells[1]:>22}")
    return "\n".join(lines)


def write_reports_json(reports, path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True))


def read_reports_json(path) -> list:
    return [EvalReport.from_dict(d) for d in json.loads(Path(path).read_text())]
