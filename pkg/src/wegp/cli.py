"""``wegp`` command line: accuracy, optimize and diagnose experiments.

Exit status is 0 on success, 1 when a check or a replication fails and 2
for configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from wegp.errors import ConfigError
from wegp.experiments import (
    ExperimentConfig,
    format_report,
    gnuplot_script,
    load_config,
    run_accuracy,
    run_diagnose,
    run_optimize,
    write_results,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wegp", description=__doc__.splitlines()[0])
    parser.add_argument("mode", choices=("accuracy", "optimize", "diagnose"))
    parser.add_argument("--config", type=Path, help="TOML experiment file")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out", type=Path, help="results CSV path")
    parser.add_argument("--jobs", type=int, help="worker processes (WEGP_JOBS takes precedence)")
    parser.add_argument("--plot-script", action="store_true", help="also write a gnuplot script next to the CSV")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> ExperimentConfig:
    if args.config is None:
        if args.mode != "diagnose":
            raise ConfigError(f"{args.mode} needs --config")
        cfg = ExperimentConfig(mode="diagnose")
    else:
        cfg = load_config(args.config)
    changes = {"mode": args.mode}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output"] = str(args.out)
    if args.plot_script:
        changes["plot_script"] = True
    return dataclasses.replace(cfg, **changes)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if cfg.mode == "diagnose":
            checks = run_diagnose(cfg)
            sys.stdout.write(format_report(checks))
            return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL
        out = Path(cfg.output)
        if cfg.mode == "accuracy":
            rows = run_accuracy(cfg, jobs=args.jobs)
        else:
            rows = run_optimize(cfg, jobs=args.jobs, trace_out=out.with_suffix(".trace.csv"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_results(rows, out)
    if cfg.plot_script:
        out.with_suffix(".gp").write_text(gnuplot_script(str(out), cfg.mode))
    failed = [r for r in rows if r.status != "ok"]
    print(f"wrote {len(rows)} rows to {out}" + (f" ({len(failed)} failed)" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
