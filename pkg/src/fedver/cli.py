"""Command-line entry point: ``fedver run`` and ``fedver compare``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .config import ConfigError, load_config, validate_config
from .data import ConfigurationError
from .experiment import compare_conditions, load_report, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

log = logging.getLogger("fedver")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedver", description="Federated verification experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("--config", required=True, help="path to a key = value config file")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out-dir", help="override the output directory")
    run.add_argument("--threads", type=int, default=1, help="worker threads for device training")

    cmp_ = sub.add_parser("compare", help="t-test between two conditions of a finished run")
    cmp_.add_argument("--report", required=True, help="output directory or its manifest.json")
    cmp_.add_argument("--a", required=True, help="first condition name")
    cmp_.add_argument("--b", required=True, help="second condition name")
    return parser


def _run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out_dir:
            cfg = replace(cfg, output_dir=args.out_dir)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1", key="threads")
        validate_config(cfg)
    except (ConfigError, ConfigurationError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run_experiment(cfg, threads=args.threads)
    except Exception as exc:  # noqa: BLE001 - reported with its exit code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(report.files)} files to {report.output_dir}")
    for name, ev in report.conditions.items():
        s = ev.summary
        print(f"{name}: median EER {s.median:.2f}%  mean {s.mean:.2f}%")
    return EXIT_OK


def _compare(args) -> int:
    try:
        report = load_report(args.report)
        result = compare_conditions(report, args.a, args.b)
    except (KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps({"a": args.a, "b": args.b, **result.to_dict()}, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return _run(args)
    return _compare(args)


if __name__ == "__main__":
    sys.exit(main())
