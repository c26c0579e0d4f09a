"""Command line: matconvert --data X.mat --gt X_gt.mat --out-cube c --out-labels l.

Exit codes: 0 ok, 1 usage, 2 I/O, 3 container/format problem.
"""

from __future__ import annotations

import argparse
import sys

from .convert import MatFormatError, convert


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


class _Usage(Exception):
    pass


def build_parser() -> _Parser:
    parser = _Parser(prog="matconvert", description=__doc__.splitlines()[0])
    parser.add_argument("--data", required=True, help="MAT container with the reflectance cube")
    parser.add_argument("--gt", required=True, help="MAT container with the ground-truth labels")
    parser.add_argument("--out-cube", required=True)
    parser.add_argument("--out-labels", required=True)
    parser.add_argument("--var", help="cube variable name (needed when candidates tie)")
    parser.add_argument("--gt-var", dest="gt_var", help="label variable name")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        shape = convert(args.data, args.gt, args.out_cube, args.out_labels, var=args.var, gt_var=args.gt_var)
        print(f"wrote {args.out_cube} ({shape[0]}x{shape[1]}x{shape[2]}) and {args.out_labels}")
        return 0
    except _Usage as ex:
        print(f"usage error: {ex}", file=sys.stderr)
        return 1
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as ex:
        print(f"I/O error: {ex}", file=sys.stderr)
        return 2
    except MatFormatError as ex:
        print(f"format error: {ex}", file=sys.stderr)
        return 3


def console_main() -> None:
    raise SystemExit(main())
