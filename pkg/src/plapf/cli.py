"""``plapf verify|denoise|classify|stats --config FILE [--seed N] [--workers K] [--out DIR]``

Exit status: 0 success, 1 invariant failure, 2 configuration or load error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .errors import ConfigError, DatasetLoadError, PlapfError, SplitError
from .pipeline.commands import run
from .pipeline.config import TASKS, load_config, parse_config

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("plapf")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plapf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task)
        p.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="parallel grid workers")
        p.add_argument("--out", help="output directory for reports")
        p.add_argument("--symmetrize", action="store_true",
                       help="treat a directed dataset as undirected (w = max(w_ij, w_ji))")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.task) if args.config else parse_config({}, args.task)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            overrides["workers"] = args.workers
        if args.out is not None:
            overrides["output"] = args.out
        if args.symmetrize:
            overrides["dataset"] = {**cfg.dataset, "symmetrize": True}
        cfg = dataclasses.replace(cfg, **overrides)
        report = run(cfg)
    except (ConfigError, DatasetLoadError, SplitError) as exc:
        print(f"plapf: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlapfError as exc:
        print(f"plapf: failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT

    paths = report.write(cfg.output)
    for path in paths:
        print(path)
    if not report.ok:
        for name in report.summary.get("failures", []):
            print(f"FAIL {name}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
