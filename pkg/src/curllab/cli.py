"""Command-line front end: ``curllab run <config>`` and friends.

Exit codes: 0 when the scenario ran and every fitted bound held, 2 when it
ran but a verification bound failed, 1 for execution errors (bad flags,
malformed configs, solver failures).  ``run`` accepts either a JSON config
path or the name of a built-in preset (``curllab list-presets``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, metavar="N",
                        help="cap BLAS/OpenMP threads (default 1)")
    common.add_argument("--out", default=None, metavar="DIR",
                        help="directory for emitted files (default .)")
    parser = _Parser(prog="curllab", parents=[common],
                     description="elliptic curl-div system lab: run "
                                 "verification scenarios from JSON configs")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND",
                                parser_class=_Parser)
    runp = sub.add_parser("run", parents=[common],
                          help="execute one scenario config")
    runp.add_argument("config", metavar="CONFIG",
                      help="path to a scenario JSON or a preset name")
    listp = sub.add_parser("list-presets", help="list built-in presets")
    listp.add_argument("--json", action="store_true",
                       help="machine-readable JSON array")
    return parser


def _set_threads(n):
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _resolve_config(arg):
    from . import presets, scenarios

    if os.path.exists(arg):
        return scenarios.load_config(arg)
    name = arg[:-5] if arg.endswith(".json") else arg
    if name in presets.PRESETS:
        return scenarios.validate_config(presets.get(name),
                                         origin=f"preset {name}")
    raise scenarios.ScenarioError(
        f"{arg}: no such config file or preset "
        f"(try `curllab list-presets`)")


def _run(args):
    from . import scenarios
    from .errors import CurlLabError

    out_dir = args.out or "."
    try:
        config = _resolve_config(args.config)
        result = scenarios.run_scenario(config, out_dir=out_dir,
                                        threads=args.threads or 1)
    except CurlLabError as exc:
        print(f"curllab: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"curllab: error: {exc}", file=sys.stderr)
        return 1
    json.dump(result.summary(), sys.stdout, indent=1, sort_keys=True)
    print()
    for path in result.files:
        print(f"wrote {path}")
    print(f"task {result.task}: {'PASS' if result.passed else 'FAIL'}")
    return 0 if result.passed else 2


def _list_presets(args):
    from . import presets

    entries = presets.describe()
    if args.json:
        json.dump(entries, sys.stdout, indent=1)
        print()
    else:
        width = max(len(e["name"]) for e in entries)
        for e in entries:
            print(f"{e['name']:<{width}}  {e['description']}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        parser.error("--threads must be a positive integer")
    threads = threads or 1
    _set_threads(threads)
    args.threads = threads
    if args.command == "run":
        return _run(args)
    if args.command == "list-presets":
        return _list_presets(args)
    parser.error("a command is required (run | list-presets)")


if __name__ == "__main__":
    sys.exit(main())
