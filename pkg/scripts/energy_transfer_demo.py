#!/usr/bin/env python3
"""Velocity response to a growing magnetic mode at stabilizing viscosity.

With nu = 10 * ||u||_W1inf the velocity half of the linearization is
damped while the magnetic half grows, so a run seeded with (0, delta*B0)
shows ||B|| growing at Re(lambda) and ||v|| riding the quadratic Lorentz
forcing at twice that rate.  The reported slope ratio should sit near 2.
About half a minute at the default amplitude; smaller delta lengthens
the run but sharpens the window.
"""

import argparse
import sys

from mhdtc.lab import main


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta", default="1e-2", help="initial magnetic amplitude")
    ap.add_argument("--Nr", type=int, default=32, help="radial points + 1")
    ap.add_argument("--outdir", default="results/energy_transfer")
    a = ap.parse_args(argv)
    return main([
        "--verbose", "energy-transfer",
        "--resolution.Nr", str(a.Nr),
        "--resolution.Mmax", "2",
        "--resolution.Kmax", "2",
        "--experiment.delta", a.delta,
        "--outdir", a.outdir,
    ])


if __name__ == "__main__":
    sys.exit(run())
