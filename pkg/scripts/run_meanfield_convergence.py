#!/usr/bin/env python3
"""Mean-field self-convergence table over a ladder of particle counts.

Deterministic quantile sampling of a 1-D profile, evolution under the
weakly singular alignment kernel, and the exact bounded-Lipschitz distance
between the N- and 2N-atom solutions at the final time.
"""

import argparse
import sys

from flocklab import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out")
    ap.add_argument("--alpha", type=float, default=0.25)
    ap.add_argument("--n-list", default="8,16,32,64")
    ap.add_argument("--t-end", type=float, default=1.0)
    args = ap.parse_args()
    return cli.main(["meanfield", "--alpha", str(args.alpha),
                     "--n-list", args.n_list, "--t-end", str(args.t_end),
                     "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
