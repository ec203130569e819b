"""Standalone figure renderer for snapgraph output files.

Exit codes follow the pipeline convention: 0 success, 1 runtime failure
(including schema mismatches), 2 usage error.
"""

from __future__ import annotations

import argparse
import sys

from .render import KINDS, PlotSpec, SchemaError, Style, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snapplots",
        description="Render figures from snapgraph CLI output files.",
    )
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--input", required=True, help="source data file")
    parser.add_argument("--output", required=True, help="image file to write")
    parser.add_argument("--cutoff", type=int, action="append", default=[],
                        help="month marked with a dashed vertical line (repeatable)")
    parser.add_argument("--channel", default=None,
                        help="strata_grid: channel to draw (default: first present)")
    parser.add_argument("--model", default=None,
                        help="strata_grid: model to draw (default: first present)")
    parser.add_argument("--dpi", type=int, default=120)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    style = Style(cutoffs=tuple(args.cutoff), channel=args.channel,
                  model=args.model, dpi=args.dpi)
    spec = PlotSpec(args.input, args.kind, args.output, style)
    try:
        result = render(spec)
    except (SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.kind} figure ({result.n_rows} rows) to {result.output_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
