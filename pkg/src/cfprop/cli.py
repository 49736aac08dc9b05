"""Command-line front end.

    cfprop gen    [-c CONFIG] [key=value ...]
    cfprop run    [-c CONFIG] [key=value ...]
    cfprop ablate [-c CONFIG] [key=value ...]
    cfprop noise  [-c CONFIG] [key=value ...]
    cfprop report RESULTS_DIR [--reference cp]

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
Worker processes: ``CFPROP_WORKERS`` (default 1).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, load_config
from .data import write_csv
from .evaluation import aggregate, format_table, read_reports_json, summary_to_json, write_summary_csv
from .experiment import run_noise, run_trials, trial_dataset, trial_seed, write_noise_outputs, write_run_outputs

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _cmd_gen(cfg, out_dir: Path) -> int:
    if cfg.dataset.kind != "synthetic":
        raise ConfigError("gen needs a synthetic dataset spec")
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for k in range(cfg.trials):
        path = out_dir / f"synthetic_trial{k:03d}.csv"
        write_csv(trial_dataset(cfg, k), path)
        manifest.append({"trial": k, "seed": trial_seed(cfg, k), "file": path.name})
    (out_dir / "datasets.json").write_text(json.dumps(manifest, indent=1))
    for m in manifest:
        print(f"trial {m['trial']:3d}  seed {m['seed']:10d}  {m['file']}")
    return EXIT_OK


def _finish_run(cfg, res, out_dir: Path) -> int:
    write_run_outputs(cfg, res, out_dir)
    if res.summary is not None:
        print(format_table(res.summary))
    print(f"results written to {out_dir}")
    if res.failed_methods:
        print(f"methods failing every trial: {', '.join(res.failed_methods)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_report(results_dir: Path, reference: str) -> int:
    reports = read_reports_json(results_dir / "reports.json")
    summary = aggregate(reports, reference=reference)
    fraction = 0.0
    cfg_path = results_dir / "config.yaml"
    if cfg_path.exists():
        fraction = load_config(cfg_path).split.train_fraction
    write_summary_csv(summary, results_dir / "summary.csv", fraction)
    (results_dir / "summary.json").write_text(json.dumps(summary_to_json(summary), indent=1, sort_keys=True))
    print(format_table(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfprop", description="Counterfactual propagation experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("gen", "write synthetic datasets as CSV"),
        ("run", "run all configured methods over all trials"),
        ("ablate", "run cp, cp_lo0 and cp_le0"),
        ("noise", "repeat the run for each outcome-noise level (see noise_mode)"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("-c", "--config", type=Path, default=None, help="YAML experiment config")
        sp.add_argument("-o", "--output", type=Path, default=None, help="output directory (overrides output_dir)")
        sp.add_argument("overrides", nargs="*", help="dotted key=value overrides")
    rp = sub.add_parser("report", help="re-aggregate reports.json of a results directory")
    rp.add_argument("results_dir", type=Path)
    rp.add_argument("--reference", default="cp")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return _cmd_report(args.results_dir, args.reference)
        cfg = load_config(args.config, args.overrides)
        if args.command == "ablate":
            cfg = replace(cfg, methods=("cp_lo0", "cp_le0", "cp"))
        out_dir = args.output or Path(cfg.output_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    try:
        if args.command == "gen":
            return _cmd_gen(cfg, out_dir)
        if args.command in ("run", "ablate"):
            return _finish_run(cfg, run_trials(cfg), out_dir)
        if args.command == "noise":
            results = run_noise(cfg)
            write_noise_outputs(cfg, results, out_dir)
            print(f"results written to {out_dir}")
            failed = sorted(set().union(*(set(r.failed_methods) for r in results.values())))
            return EXIT_RUNTIME if failed else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
