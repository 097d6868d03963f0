#!/usr/bin/env python3
"""Particle-scale experiment battery: flocking decay, bonding, chain control.

Runs a handful of representative simulations and prints one summary line
per experiment; artifacts (trajectories, event logs, plots) land under the
output directory through the standard CLI layout.
"""

import argparse
import sys

import numpy as np

from flocklab import cli
from flocklab import diagnostics as dg
from flocklab import kernels as kn
from flocklab import particles as pt


def flocking_summary(alpha: float, seed: int) -> str:
    state = pt.random_ensemble(seed, n=6, dim=2, x_scale=2.0, v_scale=0.3)
    traj, _ = pt.integrate(pt.CSSystem(kn.singular(alpha)), state, 20.0,
                           n_samples=201)
    rep = (dg.check_unconditional_flocking(traj, alpha) if alpha <= 1
           else dg.check_conditional_flocking(traj, alpha))
    return (f"alpha={alpha:<4} aligned={rep.aligned} "
            f"rate(fit)={rep.fitted_decay_rate:.3f} rate(bound)={rep.bound_rate:.3f}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    for alpha in (0.25, 0.5, 1.0):
        print(flocking_summary(alpha, args.seed))

    rc = 0
    rc |= cli.main(["particles", "--alpha", "1.0", "--n", "8", "--t-end", "20",
                    "--seed", str(args.seed), "--out", args.out])
    rc |= cli.main(["bonding", "--n", "20", "--t-end", "200",
                    "--seed", str(args.seed), "--out", args.out])
    rc |= cli.main(["control", "--n", "4", "--t-end", "500",
                    "--seed", str(args.seed), "--out", args.out])
    rc |= cli.main(["sticking", "--alpha", "0.5", "--x0", "1", "--v0", "-2",
                    "--out", args.out])
    return rc


if __name__ == "__main__":
    sys.exit(main())
