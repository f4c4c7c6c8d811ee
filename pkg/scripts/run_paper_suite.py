#!/usr/bin/env python3
"""Run the full eight-run benchmark suite (four compressors x two feedback
modes) and print the summary table.

Usage:
    python scripts/run_paper_suite.py [--jobs N] [--out DIR]

Expect roughly ten minutes of wall time at --jobs 4.
"""

import argparse
import sys
from pathlib import Path

from decopt.cli import main as cli_main

CONFIG = Path(__file__).parent / "configs" / "paper.cfg"


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--jobs", type=int, default=4)
    parser.add_argument("--out", type=str, default=None)
    args = parser.parse_args()
    cli_args = ["run", "--config", str(CONFIG), "--jobs", str(args.jobs)]
    if args.out:
        cli_args += ["--out", args.out]
    return cli_main(cli_args)


if __name__ == "__main__":
    sys.exit(main())
