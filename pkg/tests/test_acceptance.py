"""Acceptance criteria 1-9 at desk scale; each test prints one PASS/FAIL line.

Heavy: about 40 minutes on one core, mostly the d=3 shell series of criteria 4 and 7.
Run with ``pytest tests/test_acceptance.py -v``.
"""
import json
import math
import warnings

import numpy as np
import pytest

from hsboltz import cli
from hsboltz import collision_ops as co
from hsboltz import fourier_lp as fl
from hsboltz.cauchy_solver import SolverConfig
from hsboltz.forcing import (force_norm_report, gaussian_potential, periodic_modulate,
                             rotational_field, spectral_curl, spectral_divergence,
                             value_at_origin, zero_field)
from hsboltz.linear_semigroup import (besov_decay_series, heat_branch_spread, heat_coefficient,
                                      heat_window, shell_profiles, verify_besov_decay,
                                      verify_pointwise_decay)
from hsboltz.period_map import (PeriodMap, convergence_norm, lp_return_fit, serrin_iterate,
                                stationary_oracle, verify_periodicity)
from hsboltz.stability_harness import difference_fits_from_series, synthesize_initial_difference
from hsboltz.velocity_space import build_grid
from oracles import BruteLattice

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return emit


# ---------------------------------------------------------------- 1. collision structure

def test_criterion_1_collision_structure(verdict):
    grid = build_grid(6.0, 16)
    model = co.CollisionModel(grid)                    # n_v=16 streams collision events
    dv = grid.cell_volume
    rng = np.random.Generator(np.random.Philox(1))
    V = grid.nodes
    psi = np.stack([np.ones(len(V)), V[:, 0], V[:, 1], V[:, 2], np.sum(V * V, axis=1)])

    qmm = math.sqrt(np.sum(model.q(model.M) ** 2) * dv)
    F = rng.random((grid.size, 4)) * model.M[:, None] * 2
    moments = float(np.abs(psi @ model.q(F) * dv).max())

    raw = model.cs.assemble_L(model.M)
    asym = float(np.abs(raw - raw.T).max() / np.abs(raw).max())
    lin = model.linearized()
    w, _ = lin.eigh()
    scale = float(np.abs(w).max())
    n_zero = int(np.sum(w < 1e-8 * scale))
    psd = bool(w[0] > -1e-10 * scale)
    k0 = co.estimate_kappa0(lin)

    g = rng.standard_normal((grid.size, 4)) * np.exp(-np.sum(V * V, axis=1) / 8)[:, None]
    G = model.gamma(g)
    pg = float(np.abs(lin.P @ G).max() / np.abs(G).max())

    H = rng.standard_normal((1000, grid.size))
    lhs = np.einsum("ij,ij->i", H @ lin.L, H) * dv
    micro = H - H @ lin.P
    rhs = k0 * np.sum(lin.nu * micro ** 2, axis=1) * dv
    coercive = bool(np.all(lhs >= rhs * (1 - 1e-10)))

    ok = (qmm < 1e-6 and moments < 1e-6 and asym < 1e-12 and psd and n_zero == 5
          and k0 > 0 and pg < 1e-6 and coercive)
    verdict(1, ok, f"n_v=16 |Q(M,M)|={qmm:.1e} moments={moments:.1e} asym={asym:.1e} "
                   f"null={n_zero} lambda_6={w[5]:.3f} kappa0={k0:.4f} |PGamma|/|Gamma|={pg:.1e} "
                   f"coercive(1000)={coercive}")
    assert ok


# ---------------------------------------------------------------- 2. brute-force oracle

def test_criterion_2_bruteforce_equivalence(verdict):
    grid = build_grid(4.0, 8)
    model = co.CollisionModel(grid)
    lin = model.linearized()
    brute = BruteLattice(8, 4.0)
    rng = np.random.Generator(np.random.Philox(2))
    F, G = rng.random(512), rng.random(512)
    dq = max(np.abs(model.q(F, G) - brute.Q(F, G)).max(), np.abs(model.q(F) - brute.Q(F, F)).max())
    nu, K1, K2 = brute.nu_K1_K2()
    g = rng.standard_normal(512)
    dk = float(np.abs(lin.K @ g - (K2 - K1) @ g).max())
    dn = float(np.abs(lin.nu - nu).max())
    dl = float(np.abs(lin.L @ g - (nu * g - (K2 - K1) @ g)).max())
    ok = max(dq, dk, dn, dl) < 1e-10
    verdict(2, ok, f"8^3: max|Q - Q_naive|={dq:.1e} max|Kg - Kg_naive|={dk:.1e} "
                   f"max|nu - nu_naive|={dn:.1e} max|Lg - Lg_naive|={dl:.1e}")
    assert ok


# ---------------------------------------------------------------- 3. Littlewood-Paley

def test_criterion_3_littlewood_paley(verdict):
    rng = np.random.Generator(np.random.Philox(3))
    pou = 0.0
    for box in (fl.Box(64, 2 * np.pi, 1), fl.Box(24, 10.0, 2), fl.Box(32, 2 * np.pi * 16, 3)):
        tot = fl.dyadic_filter(box).weights.sum(axis=0)
        nz = box.xi_abs.ravel() > 0
        pou = max(pou, float(np.abs(tot[nz] - 1).max()))

    box = fl.Box(16, 2 * np.pi * 2, 3)
    filt = fl.dyadic_filter(box)
    lo, hi = np.inf, 0.0
    for _ in range(20):
        sp = fl.SpatialSpectrum.from_physical(box, rng.standard_normal(box.shape))
        for j in filt.js:
            blk = fl.lp_block(sp, j).coeffs
            n0 = fl.l2_norm(blk, box)
            if n0 > 0:
                r = fl.l2_norm(fl.gradient(blk, box), box) / n0 / 2.0 ** j
                lo, hi = min(lo, r), max(hi, r)
    bern = lo >= 0.75 * (1 - 1e-12) and hi <= 8 / 3 * (1 + 1e-12)

    ibox = fl.Box(12, 2 * np.pi * 8, 3)
    C = fl.interpolation_constant_bound(-1.5, 2.5)
    interp = []
    pbox = fl.Box(12, 2 * np.pi * 4, 3)
    prod = []
    for _ in range(2):
        wi = wp = 0.0
        for _ in range(500):
            c = fl.random_band_field(ibox, rng, slope=rng.uniform(-3, 1), k_max_frac=rng.uniform(0.2, 1))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", fl.ResolutionWarning)
                wi = max(wi, fl.interpolation_ratio(c, ibox, -1.5, 2.5))
            c1 = fl.random_band_field(pbox, rng, slope=rng.uniform(-3, 0), k_max_frac=rng.uniform(0.3, 1))
            c2 = fl.random_band_field(pbox, rng, slope=rng.uniform(-3, 0), k_max_frac=rng.uniform(0.3, 1))
            wp = max(wp, fl.product_ratio(c1, c2, pbox, 0.5, 0.5))
        interp.append(wi)
        prod.append(wp)
    stable = all(0.5 <= a / b <= 2.0 for a, b in (interp, prod))
    ok = pou <= 1e-12 and bern and max(interp) <= C and stable
    verdict(3, ok, f"unity={pou:.1e} bernstein/2^j in [{lo:.3f},{hi:.3f}] "
                   f"interp max={interp} (bound {C:.3f}) product max={prod} (1000 fields)")
    assert ok


# ---------------------------------------------------------------- 4 and 7 shared series

WINDOW = (200.0, 800.0)
S0 = -1.5 + 0.1


@pytest.fixture(scope="module")
def lin12():
    return co.CollisionModel(build_grid(4.5, 12), store_events=False).linearized()


@pytest.fixture(scope="module")
def series12(lin12):
    box = fl.Box(32, 2 * np.pi * 16, 3)
    times = np.geomspace(1.0, WINDOW[1], 40)
    # s0 for L^p data: d/2 - d/p
    return box, besov_decay_series(lin12, box, S0, -1, times, "low")


def test_criterion_4_semigroup_decay(verdict, lin12, series12):
    box, ser = series12
    xis = [np.array(k, float) * box.dxi for k in ([1, 0, 0], [1, 1, 0], [1, 1, 1])]
    spread, _ = heat_branch_spread(verify_pointwise_decay(lin12, xis, T_max=200))

    dirs = [np.array(d, float) / np.linalg.norm(d) for d in ([1, 0, 0], [1, 1, 0], [1, 1, 1])]
    big = verify_pointwise_decay(lin12, [r * d for d in dirs for r in (1.0, 2.0, 4.0)],
                                 T_max=60)
    rates = np.array([f.fitted_rate for f in big])
    at_one = rates[::3].min()
    uniform = bool(rates.min() > 0 and rates.min() >= (1 - 1e-6) * at_one)

    gen = verify_besov_decay(ser, 0.5, S0, "generic", WINDOW)
    mic = verify_besov_decay(ser, 0.5, S0, "micro", WINDOW)
    gap = mic.fitted_rate - gen.fitted_rate
    parts = {"heat": spread < 0.3, "uniform": uniform, "gap": abs(gap - 0.5) <= 0.2,
             "besov": abs(gen.fitted_rate - 0.95) <= 0.2}
    ok = all(parts.values())
    verdict(4, ok, f"heat spread={spread:.3f}; rates |xi|>=1 min={rates.min():.3f} "
                   f"(at |xi|=1: {at_one:.3f}, max {rates.max():.3f}); "
                   f"besov(1/2,{S0:g}) fitted={gen.fitted_rate:.3f} expected 0.95; "
                   f"micro gap={gap:.3f}; window={WINDOW}; {parts}")
    assert ok


def test_criterion_7_stability_decay(verdict, series12):
    box, ser = series12
    fits = difference_fits_from_series(ser, "generic", S0, [0.5, 0.9], WINDOW, N=4)
    pairs = [(f.fitted_rate, f.expected_rate) for f in fits]

    # s - s0 = 1/2 puts the H^s integrand flat in |xi|: it needs a box whose lowest
    # shell stays below the heat width 1/sqrt(2 kappa t) over the whole fit window
    lin = co.CollisionModel(build_grid(4.5, 10), store_events=False).linearized()
    big = fl.Box(32, 2 * np.pi * 64, 3)
    kappa = heat_coefficient(lin, big)
    win = heat_window(kappa, big)
    # L^p data sits in B^{d/2 - d/p}_{2,inf}
    variants = {f"p{p:g}": ("generic", 1.5 - 3 / p) for p in (2.0, 1.5)}
    pser = besov_decay_series(lin, big, 0.0, -1, np.geomspace(1.0, win[1], 40), "low",
                              profiles={"generic": shell_profiles(lin)["generic"]},
                              variants=variants)
    ret = [lp_return_fit(pser, "p2", 2.0, 0.5, 3, win), lp_return_fit(pser, "p1.5", 1.5, 0.0, 3, win)]
    ok = (all(abs(a - b) <= 0.25 for a, b in pairs)
          and all(abs(f.fitted_rate - f.expected_rate) <= 0.15 for f in ret))
    verdict(7, ok, "pairs (s,s0)=(0.5,-1.4),(0.9,-1.4): "
                   + ", ".join(f"{a:.3f} vs {b:.3f}" for a, b in pairs)
                   + f" window={WINDOW}; L^p return (p,s)=(2,1/2),(1.5,0): "
                   + ", ".join(f"{f.fitted_rate:.3f} vs {f.expected_rate:.3f}" for f in ret)
                   + f" (L=2pi*64, kappa={kappa:.4f}, window=[{win[0]:.0f}, {win[1]:.0f}])")
    assert ok


# ---------------------------------------------------------------- 5. stationary oracle

def test_criterion_5_stationary_oracle(verdict):
    phi = gaussian_potential(1e-2)
    box = fl.Box(16, 2 * np.pi, 1)

    def run(n_v, dt):
        model = co.CollisionModel(build_grid(4.0, n_v))
        return stationary_oracle(phi, SolverConfig(dt=dt, scheme="strang"), box, model, period=5.0)

    base = run(8, 0.25)
    dts = [base["error"], run(8, 0.125)["error"]]
    # x is spectral and already exact for the Gaussian, so refine the velocity lattice at fixed R
    grids = [base["error"], run(10, 0.25)["error"]]
    ok = (base["converged"] and abs(base["phi_max"] - 1e-2) < 1e-12 and base["error"] < 1e-3
          and dts[1] < dts[0] and grids[1] < grids[0])
    verdict(5, ok, f"d=1 max|phi|={base['phi_max']:.1e}: error={base['error']:.4e} "
                   f"dt 0.25->0.125: {dts[0]:.4e}->{dts[1]:.4e}; "
                   f"n_v 8->10 (R=4): {grids[0]:.4e}->{grids[1]:.4e}")
    assert ok


# ---------------------------------------------------------------- 6. period map

def test_criterion_6_period_map(verdict):
    grid = build_grid(4.0, 8)
    model = co.CollisionModel(grid)
    box = fl.Box(16, 2 * np.pi, 1)
    # the force heats the xi=0 mode by a fixed amount per period on the torus; pin it
    cfg = SolverConfig(dt=0.25, scheme="strang", zero_mode="pin")
    tol = 1e-9
    E = periodic_modulate(rotational_field(1e-2, 3), 5.0, "sin")
    pmap = PeriodMap(box, model, E, cfg)
    f, rep = serrin_iterate(E, cfg, box, model, n_max=120, tol=tol, pmap=pmap)
    res = verify_periodicity(f, E, cfg, model, pmap=pmap)
    g0 = synthesize_initial_difference(box, model, 0.0, 1e-3, seed=9)
    f2, rep2 = serrin_iterate(E, cfg, box, model, n_max=120, tol=tol, pmap=pmap, f0=g0)
    uniq = convergence_norm(f.coeffs - f2.coeffs, box, grid.cell_volume, 0.1, cfg.N)
    z, repz = serrin_iterate(zero_field(), cfg, box, model, period=5.0)
    zero_ok = repz.converged and repz.n_converged == 1 and repz.d == [0.0]
    ok = (rep.converged and rep.monotone_after(2) and res < 10 * tol and rep2.converged
          and uniq < 10 * tol and zero_ok)
    verdict(6, ok, f"periods={rep.n_converged} monotone(n>=2)={rep.monotone_after(2)} "
                   f"d_1={rep.d[0]:.2e} d_last={rep.d[-1]:.2e} contraction={rep.contraction:.3f} "
                   f"residual={res:.2e} uniqueness={uniq:.2e} (10 tol={10 * tol:.0e}) E=0 n=1: {zero_ok}")
    assert ok


# ---------------------------------------------------------------- 8. rotational force

def test_criterion_8_rotational_force(verdict):
    eps = 1e-2
    box = fl.Box(32, 2 * np.pi * 16, 3)
    c = rotational_field(eps, 3).coeffs(box)
    div = float(np.abs(spectral_divergence(c, box)).max() / (np.abs(c).max() * box.xi_abs.max()))
    fine = fl.Box(96, 4 * np.pi, 3)
    curl0 = value_at_origin(spectral_curl(rotational_field(eps, 3).coeffs(fine), fine), fine).real
    nbox = fl.Box(16, 2 * np.pi * 4, 3)
    vals = [force_norm_report(rotational_field(e, 3), nbox, 4)["total"] for e in (1e-4, 1e-3, 1e-2)]
    ratios = [vals[1] / vals[0], vals[2] / vals[1]]
    ok = (div < 1e-14 and np.allclose(curl0, [0, 0, 2 * eps], atol=1e-6 * eps)
          and all(abs(r - 10) < 1e-8 for r in ratios))
    verdict(8, ok, f"div/|xi||E|={div:.1e} curl(0)={np.round(curl0, 10).tolist()} "
                   f"norm ratios per decade={ratios}")
    assert ok


# ---------------------------------------------------------------- 9. determinism

CAUCHY = """
experiment = "cauchy"
seed = 11
[grid]
n_v = 8
n_x = 16
[solver]
dt = 0.25
scheme = "strang"
[force]
kind = "rotational"
eps = 1e-2
period = 5.0
[params]
t_end = 5.0
initial = "synthesized"
s0 = 0.0
amplitude = 1e-2
"""


def test_criterion_9_determinism(verdict, tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(CAUCHY)
    codes = []
    for w in (1, 8):
        codes.append(cli.main(["run", str(p), "-o", str(tmp_path / f"w{w}"), "--workers", str(w)]))
    a = (tmp_path / "w1" / "report.json").read_bytes()
    b = (tmp_path / "w8" / "report.json").read_bytes()
    ta = (tmp_path / "w1" / "trace.csv").read_bytes()
    tb = (tmp_path / "w8" / "trace.csv").read_bytes()
    ok = codes == [0, 0] and a == b and ta == tb
    h = json.loads(a)["config_hash"][:12]
    verdict(9, ok, f"workers 1 vs 8: report bytes equal={a == b} trace bytes equal={ta == tb} "
                   f"config_hash={h}")
    assert ok
