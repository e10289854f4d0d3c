#!/usr/bin/env python3
"""Escape-time ladder at desk resolution.

The growing mode at eps = 1e-3 sits at (m, k) = (1, -2) and is already
converged past ten digits at Nr = 32, so the sweep runs with a small
angular window and finishes in a few minutes on one core.  Expect the
fitted slope of t_star against log(1/delta) to land within a fraction of
a percent of 1/Re(lambda).
"""

import argparse
import sys

from mhdtc.lab import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--deltas", default="1e-3,1e-4,1e-5,1e-6",
                    help="geometric amplitude ladder, comma separated")
    ap.add_argument("--Nr", type=int, default=32, help="radial points + 1")
    ap.add_argument("--outdir", default="results/desk_sweep")
    a = ap.parse_args(argv)
    return main([
        "--verbose", "instability-sweep",
        "--resolution.Nr", str(a.Nr),
        "--resolution.Mmax", "2",
        "--resolution.Kmax", "2",
        "--experiment.delta_list", a.deltas,
        "--outdir", a.outdir,
    ])


if __name__ == "__main__":
    sys.exit(run())
