"""Command-line figure rendering: gridfleet-plots render --in DIR --fig KIND ..."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import FIGURE_KINDS, FigureSpec, RenderError, render


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridfleet-plots",
                                 description="render figures from solver CSV artifacts")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure")
    p.add_argument("--in", dest="input_dir", required=True,
                   help="run directory holding the CSV artifacts")
    p.add_argument("--fig", dest="kind", required=True, choices=FIGURE_KINDS)
    p.add_argument("--buses", default="", help="comma-separated bus ids")
    p.add_argument("--zones", default="", help="comma-separated zone ids")
    p.add_argument("--out", required=True, help="output image path")
    return ap


def _split(arg: str) -> list[str]:
    return [s.strip() for s in arg.split(",") if s.strip()]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = FigureSpec(
            input_dir=Path(args.input_dir),
            kind=args.kind,
            output=Path(args.out),
            buses=_split(args.buses),
            zones=_split(args.zones),
        )
        spec.output.parent.mkdir(parents=True, exist_ok=True)
        image, tidy = render(spec)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {image} and {tidy}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
