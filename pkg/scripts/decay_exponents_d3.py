"""Algebraic decay exponents of the linearized evolution on a 3-D box.

One shell-orbit propagation feeds the Besov fits of generic and micro data and the
difference decay for several (s, s0) pairs.  The L^p return exponents need a
longer box (lowest shell below the heat width over the whole window) and get a
second propagation on a coarser velocity grid.  About 40 minutes on one core.

    python scripts/decay_exponents_d3.py -o decay_d3.json
"""
import argparse
import json
import sys
import time

import numpy as np

from hsboltz.collision_ops import CollisionModel
from hsboltz.fourier_lp import Box
from hsboltz.linear_semigroup import (besov_decay_series, fits_to_json, heat_coefficient,
                                      heat_window, shell_profiles, verify_besov_decay)
from hsboltz.period_map import lp_return_fit
from hsboltz.stability_harness import difference_fits_from_series
from hsboltz.velocity_space import build_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-v", type=int, default=12)
    ap.add_argument("--R", type=float, default=4.5)
    ap.add_argument("--n-x", type=int, default=32)
    ap.add_argument("--periods", type=float, default=16, help="L_box / 2 pi")
    ap.add_argument("--s0", type=float, default=-1.4)
    ap.add_argument("--t-max", type=float, default=800.0)
    ap.add_argument("--window", type=float, nargs=2, default=(200.0, 800.0))
    ap.add_argument("--n-v-lp", type=int, default=10, help="velocity grid of the L^p runs")
    ap.add_argument("--periods-lp", type=float, default=64, help="L_box / 2 pi of the L^p runs")
    ap.add_argument("-o", "--output")
    args = ap.parse_args()

    t0 = time.perf_counter()
    lin = CollisionModel(build_grid(args.R, args.n_v), store_events=False).linearized()
    box = Box(args.n_x, 2 * np.pi * args.periods, 3)
    times = np.geomspace(1.0, args.t_max, 40)

    def progress(i, n):
        if i % 20 == 0 or i == n:
            print(f"orbit {i}/{n}  {time.perf_counter() - t0:.0f}s", file=sys.stderr, flush=True)

    ser = besov_decay_series(lin, box, args.s0, -1, times, "low", progress=progress)
    win = tuple(args.window)
    fits = [verify_besov_decay(ser, 0.5, args.s0, "generic", win),
            verify_besov_decay(ser, 0.5, args.s0, "micro", win)]
    fits += difference_fits_from_series(ser, "generic", args.s0, [0.5, 0.9], win, N=4)

    plin = CollisionModel(build_grid(args.R, args.n_v_lp), store_events=False).linearized()
    big = Box(args.n_x, 2 * np.pi * args.periods_lp, 3)
    pwin = heat_window(heat_coefficient(plin, big), big)
    variants = {f"p{p:g}": ("generic", 1.5 - 3 / p) for p in (2.0, 1.5)}
    pser = besov_decay_series(plin, big, 0.0, -1, np.geomspace(1.0, pwin[1], 40), "low",
                              profiles={"generic": shell_profiles(plin)["generic"]},
                              variants=variants, progress=progress)
    fits += [lp_return_fit(pser, "p2", 2.0, 0.5, 3, pwin),
             lp_return_fit(pser, "p1.5", 1.5, 0.0, 3, pwin)]
    for f in fits:
        print(f"{f.label:40s} fitted {f.fitted_rate:.3f}  expected {f.expected_rate:.3f}",
              file=sys.stderr)
    print(f"micro gap {fits[1].fitted_rate - fits[0].fitted_rate:.3f}", file=sys.stderr)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(fits_to_json(fits) + "\n")
    else:
        print(json.dumps([[f.label, f.fitted_rate, f.expected_rate] for f in fits], indent=1))


if __name__ == "__main__":
    main()
