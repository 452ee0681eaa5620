"""Structure checks of the collision operator on one velocity grid.

    python scripts/collision_structure.py --n-v 16 --R 6 -o collision16.json
"""
import argparse
import json
import time

import numpy as np

from hsboltz import collision_ops as co
from hsboltz.velocity_space import build_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-v", type=int, default=16)
    ap.add_argument("--R", type=float, default=6.0)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-o", "--output")
    args = ap.parse_args()

    t0 = time.perf_counter()
    grid = build_grid(args.R, args.n_v)
    model = co.CollisionModel(grid)
    dv = grid.cell_volume
    V = grid.nodes
    psi = np.stack([np.ones(len(V)), *V.T, np.sum(V * V, axis=1)])
    rng = np.random.Generator(np.random.Philox(args.seed))

    out = {"n_v": args.n_v, "R": args.R, "stored_events": model.cs.events is not None}
    out["Q_MM_l2"] = float(np.sqrt(np.sum(model.q(model.M) ** 2) * dv))
    F = rng.random((grid.size, 4)) * model.M[:, None]
    out["moments_max"] = float(np.abs(psi @ model.q(F) * dv).max())

    raw = model.cs.assemble_L(model.M)
    out["raw_asymmetry"] = float(np.abs(raw - raw.T).max() / np.abs(raw).max())
    del raw
    lin = model.linearized()
    w, _ = lin.eigh()
    out["eigenvalues_low"] = w[:8].tolist()
    out["kappa0"] = co.estimate_kappa0(lin)

    g = rng.standard_normal((grid.size, 4))
    G = model.gamma(g)
    out["P_gamma_rel"] = float(np.abs(lin.P @ G).max() / np.abs(G).max())

    H = rng.standard_normal((args.samples, grid.size))
    lhs = np.einsum("ij,ij->i", H @ lin.L, H) * dv
    micro = H - H @ lin.P
    rhs = out["kappa0"] * np.sum(lin.nu * micro ** 2, axis=1) * dv
    out["coercivity_min_margin"] = float(np.min(lhs / rhs))
    out["wall_s"] = time.perf_counter() - t0

    text = json.dumps(out, indent=1)
    print(text)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text + "\n")


if __name__ == "__main__":
    main()
