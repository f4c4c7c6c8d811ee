"""Batch front end: render the four standard panels for a suite directory."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .panels import PANELS, PanelSpec, render


def discover_runs(suite_dir: Path) -> tuple[tuple[Path, str], ...]:
    """All run CSVs in a suite directory, labeled by file stem."""
    paths = sorted(p for p in suite_dir.glob("*.csv") if p.stem != "summary")
    return tuple((p, p.stem) for p in paths)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="decopt-plot",
        description="render figure panels from a suite of run CSVs",
    )
    parser.add_argument("--suite", type=Path, required=True, help="directory of run CSVs")
    parser.add_argument("--out", type=Path, required=True, help="output image directory")
    parser.add_argument(
        "--panels", type=str, default=",".join(PANELS),
        help=f"comma-separated subset of {','.join(PANELS)}",
    )
    args = parser.parse_args(argv)

    inputs = discover_runs(args.suite)
    if not inputs:
        print(f"no run CSVs found in {args.suite}", file=sys.stderr)
        return 2
    requested = [p.strip() for p in args.panels.split(",") if p.strip()]
    unknown = [p for p in requested if p not in PANELS]
    if unknown:
        print(f"unknown panels: {unknown}; choose from {PANELS}", file=sys.stderr)
        return 2
    for panel in requested:
        out = render(PanelSpec(panel=panel, inputs=inputs, out_path=args.out / f"{panel}.png"))
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
