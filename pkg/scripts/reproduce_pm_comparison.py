#!/usr/bin/env python3
"""Run the full viscous-vs-porous-medium comparison sweep.

Both density cases, the seven coupling values c, snapshots at t = 0, 200,
400 on [-20, 20] with dx = dt = 0.01.  Writes per-case CSVs and SVG figure
grids under the output directory.  Use --smoke for the reduced variant
(dx = dt = 0.05, t <= 50) that finishes in about a minute.
"""

import argparse
import sys

from flocklab import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out")
    ap.add_argument("--smoke", action="store_true")
    args = ap.parse_args()

    argv = ["sweep", "--out", args.out]
    if args.smoke:
        argv.append("--smoke")
    return cli.main(argv)


if __name__ == "__main__":
    sys.exit(main())
