"""Command-line entry point: ``mlpheat run`` and ``mlpheat counts``.

Exit codes: 0 success, 1 config error, 2 estimation failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import yaml

from .analysis import ConfigError, RunConfig, count_table, emit_outputs, run_experiment
from .mlp_core import EstimationError
from .oracle import OracleConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_IO = 0, 1, 2, 3

# command-line flag -> RunConfig field
_OVERRIDES = {
    "problem": "problem",
    "d": "d",
    "T": "T",
    "t0": "t0",
    "nmax": "n_max",
    "m": "m",
    "base_mode": "base_mode",
    "reference": "reference",
    "ref_n": "ref_n",
    "ref_m": "ref_m",
    "reps": "repetitions",
    "p": "p",
    "seed": "seed",
    "out": "output",
    "threads": "threads",
}


def load_config(path) -> dict:
    """Read a flat ``key: value`` file (YAML syntax); nested values are rejected."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected key-value pairs at top level")
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: key {key!r} is nested; only flat keys are allowed")
    return data


def build_config(args: argparse.Namespace) -> RunConfig:
    data = load_config(args.config) if args.config else {}
    for flag, key in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    if getattr(args, "m", None) is not None and "base_mode" not in data:
        data["base_mode"] = "fixed"
    try:
        config = RunConfig.from_mapping(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    config.validate()
    return config


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlpheat", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a convergence experiment")
    run.add_argument("--config", help="flat key: value config file")
    run.add_argument("--problem")
    run.add_argument("--d", type=int)
    run.add_argument("--T", type=float)
    run.add_argument("--t0", type=float)
    run.add_argument("--nmax", type=int)
    run.add_argument("--m", type=int, help="fixed base m (implies base_mode fixed)")
    run.add_argument("--base-mode", dest="base_mode", choices=["schedule", "fixed"])
    run.add_argument("--reference", choices=["mlp", "oracle", "exact"])
    run.add_argument("--ref-n", dest="ref_n", type=int)
    run.add_argument("--ref-m", dest="ref_m", type=int)
    run.add_argument("--reps", type=int)
    run.add_argument("--p", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output prefix (writes .csv, .replicates.csv, .plot.dat, .meta.json)")
    run.add_argument("--threads", type=int)

    counts = sub.add_parser("counts", help="print the closed-form random-variable counts")
    counts.add_argument("--d", type=int, default=100)
    counts.add_argument("--nmax", type=int, default=7)
    counts.add_argument("--m", type=int, help="fixed base m instead of the M_n schedule")
    return parser


def _run(args) -> int:
    try:
        config = build_config(args)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_experiment(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimationError, OracleConvergenceError) as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION

    print("n,m,estimate,error,RT,RV")
    for r in report.rows:
        print(f"{r.n},{r.m},{r.estimate!r},{r.error!r},{r.runtime:.4f},{r.rv_count}")
    if config.output:
        try:
            paths = emit_outputs(report, config.output)
        except OSError as exc:
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
        for path in paths.values():
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def _counts(args) -> int:
    if args.d < 1 or args.nmax < 1 or (args.m is not None and args.m < 1):
        print("config error: d, nmax and m must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    mode = "schedule" if args.m is None else "fixed"
    print("n,m,RV")
    for n, m, rv in count_table(args.d, args.nmax, mode, args.m or 1):
        print(f"{n},{m},{rv}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _run(args)
    return _counts(args)


if __name__ == "__main__":
    sys.exit(main())
