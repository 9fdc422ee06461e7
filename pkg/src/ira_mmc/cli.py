"""Command-line entry point.

    ira-mmc run --config FILE [--problem NAME --solver full|ira --nelx N ...]
    ira-mmc compare --config FILE [overrides]

Config files are flat ``key = value`` text; ``#`` starts a comment.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from .driver import RunConfig, compare, load_config, run

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3

_OVERRIDES = {
    "problem": str, "solver": str, "nelx": int, "nely": int, "eta": float,
    "eps_star": float, "delta": float, "tol_x": float, "max_iter": int,
    "seed": int, "output_dir": str,
}
assert set(_OVERRIDES) == {f.name for f in fields(RunConfig)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ira-mmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver events")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one optimization"),
                           ("compare", "run full and IRA legs and report differences")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="key = value config file")
        for key, kind in _OVERRIDES.items():
            p.add_argument(f"--{key}", type=kind, default=None)
    return parser


def _summary_line(rec) -> str:
    return (f"stop={rec.stop_reason} iterations={rec.iterations} "
            f"objective={rec.final_objective:.6g} constraint={rec.final_constraint:.3g} "
            f"wall_s={rec.wall_time:.3f} refactorizations={rec.refactorizations}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in _OVERRIDES}
    try:
        config = load_config(args.config, overrides)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            record = run(config)
            print(_summary_line(record))
        else:
            cmp = compare(config)
            sys.stdout.write(cmp.report())
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # e.g. a grid the problem factory rejects
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
