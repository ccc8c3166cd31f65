"""Command-line entry point.

Usage: plot <kind> <csv...> --out <path> [--truth v1,v2,...]
       [--columns a,b,...]

Exit codes: 0 success, 2 invalid input (missing columns, empty CSV, bad
arguments), 4 output I/O failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .csvio import CsvFormatError
from .render import KINDS, PlotSpec, render


def _parse_truth(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise CsvFormatError(f"invalid --truth value list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render figures from simulation CSVs.")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("inputs", nargs="+", metavar="csv")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--truth", default="",
                        help="comma-separated reference values: horizontal "
                             "lines (trajectory), per-column targets "
                             "(l1-loglog), or x,y target pairs (sensor-map)")
    parser.add_argument("--columns", default="",
                        help="comma-separated value columns (default: all "
                             "except t)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    missing = [p for p in args.inputs if not os.path.isfile(p)]
    if missing:
        print(f"error: no such input file(s): {missing}", file=sys.stderr)
        return 2
    try:
        spec = PlotSpec(
            kind=args.kind, inputs=args.inputs, out=args.out,
            truth=_parse_truth(args.truth),
            columns=[c for c in args.columns.split(",") if c])
        extras = render(spec)
    except CsvFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    for col, slope in extras.items():
        print(f"{col}: slope={slope:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
