"""Command-line entry point: `plot ablation <csv> <out>` or `plot training <csv> <out>`."""

import argparse
import sys

from .figures import SchemaError, plot_ablation, plot_training


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plot", description="Render result CSVs to static PNG or SVG figures."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("ablation", "strategy-by-budget bar panels from an ablation results CSV"),
        ("training", "per-episode objective curve from a training log CSV"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("csv", help="input CSV path")
        cmd.add_argument("out", help="output image path (.png or .svg)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ablation":
            panels = plot_ablation(args.csv, args.out)
            print(f"panels={panels}")
        else:
            points = plot_training(args.csv, args.out)
            print(f"points={points}")
    except (SchemaError, ValueError, OSError) as exc:
        print(f"plot {args.command}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
