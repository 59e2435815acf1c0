"""Command-line entry point.

    clpd gen|corpus|rank|teachers|distill|suite|sweep|table1 --config FILE
         [--seed N] [--variant V] [--teacher T] [--jobs K] [--out DIR]

Exit codes: 0 ok, 2 config error, 3 missing upstream artifact, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import sys

from clpd.errors import ConfigError, MissingArtifactError
from clpd.harness import experiment
from clpd.harness.config import load_config

COMMANDS = ("gen", "corpus", "rank", "teachers", "distill", "suite", "sweep", "table1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clpd",
        description="curriculum-guided progressive distillation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file (YAML)")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--jobs", type=int, default=None,
                       help="parallel run jobs (default: config, 0 = all cores)")
        if name == "distill":
            p.add_argument("--variant", required=True)
            p.add_argument("--seed", type=int, required=True)
            p.add_argument("--teacher", default=None,
                           help="fixed teacher for vanilla/cl_only")
    return parser


def run(argv=None) -> int:
    from clpd.threads import limit_blas_threads_once

    limit_blas_threads_once(1)
    args = build_parser().parse_args(argv)
    config = load_config(args.config)
    if args.command == "gen":
        for path in experiment.cmd_gen(config, args.out):
            print(path)
    elif args.command == "corpus":
        for path in experiment.cmd_corpus(config, args.out):
            print(path)
    elif args.command == "rank":
        print(experiment.cmd_rank(config, args.out))
    elif args.command == "teachers":
        print(experiment.cmd_teachers(config, args.out))
    elif args.command == "distill":
        print(
            experiment.cmd_distill(
                config, args.variant, args.seed, args.teacher, args.out
            )
        )
    elif args.command == "suite":
        print(experiment.cmd_suite(config, args.out, args.jobs))
    elif args.command == "sweep":
        print(experiment.cmd_sweep(config, args.out, args.jobs))
    elif args.command == "table1":
        print(experiment.cmd_table1(config, args.out, args.jobs))
    return 0


def main() -> None:
    try:
        sys.exit(run())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        sys.exit(2)
    except MissingArtifactError as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        sys.exit(3)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(4)


if __name__ == "__main__":
    main()
