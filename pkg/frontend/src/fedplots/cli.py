"""Command line: `plots mse --run <dir> --out fig.png` and
`plots slope --csv <file> --out fig.png`."""

from __future__ import annotations

import argparse
import json
import sys

from .io import SchemaError
from .mse import PlotSpec, plot_mse
from .slope import plot_slope


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plots",
                                 description="render fedbias CSV outputs")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("mse", help="MSE panels from a run directory or csv files")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--run", help="benchmark run directory (manifest + cells)")
    group.add_argument("--csv", nargs="+", help="standalone mse.csv files")
    sp.add_argument("--panels", default="both",
                    choices=("iterates", "averaged", "both"))
    sp.add_argument("--linear-y", action="store_true")
    sp.add_argument("--log-x", action="store_true")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("slope", help="log-log residual plot with fitted slope")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        if args.command == "mse":
            spec = PlotSpec(out_path=args.out, run_dir=args.run,
                            csv_paths=tuple(args.csv or ()), panels=args.panels,
                            log_y=not args.linear_y, log_x=args.log_x)
            result = plot_mse(spec)
        else:
            result = plot_slope(args.csv, args.out)
    except (SchemaError, FileNotFoundError, ValueError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    json.dump(result, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
