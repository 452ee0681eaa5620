"""Stationary-state error for E = -grad(phi) under dt halving and velocity refinement.

Each row converges the period map and compares with the mass-matched e^{-phi} M.

    python scripts/stationary_refinement.py --amp 1e-2 -o stationary.csv
"""
import argparse
import csv
import sys
import time

import numpy as np

from hsboltz.cauchy_solver import SolverConfig
from hsboltz.collision_ops import CollisionModel
from hsboltz.forcing import gaussian_potential
from hsboltz.fourier_lp import Box
from hsboltz.period_map import stationary_oracle
from hsboltz.velocity_space import build_grid

LADDER = [(8, 4.0, 16, 0.25), (8, 4.0, 16, 0.125), (8, 4.0, 16, 0.0625), (10, 4.0, 16, 0.25),
          (12, 4.0, 16, 0.25), (8, 4.0, 32, 0.25)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--amp", type=float, default=1e-2, help="max |phi|")
    ap.add_argument("--period", type=float, default=5.0)
    ap.add_argument("--tol", type=float, default=1e-9)
    ap.add_argument("-o", "--output", help="CSV file (stdout if omitted)")
    args = ap.parse_args()

    phi = gaussian_potential(args.amp)
    rows = []
    for n_v, R, n_x, dt in LADDER:
        t0 = time.perf_counter()
        model = CollisionModel(build_grid(R, n_v))
        r = stationary_oracle(phi, SolverConfig(dt=dt, scheme="strang"), Box(n_x, 2 * np.pi, 1),
                              model, period=args.period, tol=args.tol)
        rows.append({"n_v": n_v, "R": R, "n_x": n_x, "dt": dt, "error": r["error"],
                     "error_perturbation": r["error_perturbation"], "periods": r["n"],
                     "converged": r["converged"], "wall_s": round(time.perf_counter() - t0, 1)})
        print(rows[-1], file=sys.stderr, flush=True)
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    if args.output:
        fh.close()


if __name__ == "__main__":
    main()
