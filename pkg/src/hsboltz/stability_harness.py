"""Decay of the difference of two solutions driven by the same force."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cauchy_solver import SolverConfig, Stepper, step
from .collision_ops import CollisionModel, project_P
from .forcing import ForceField
from .fourier_lp import (Box, DistributionField, ResolutionWarning, besov_norm, block_norms,
                         dyadic_filter, l2_norm, multi_indices, sobolev_norm, _power)
from .linear_semigroup import (DecayFit, besov_decay_series, fit_algebraic, shell_profiles)
from .velocity_fd import dv_multi


@dataclass
class StabilityScenario:
    E: ForceField
    f0_1: DistributionField
    f0_2: DistributionField
    s0: float
    targets: list
    eps: float = 0.1
    horizon: float = 100.0
    n_samples: int = 40
    window: tuple | None = None          # default (horizon / 4, horizon)

    def __post_init__(self):
        d = self.f0_1.box.d
        if not -d / 2 < self.s0 <= 0.5:
            raise ValueError(f"s0 must lie in (-{d}/2, 1/2]")
        if any(s < self.s0 for s in self.targets):
            raise ValueError("every target s must be >= s0")
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")


def _pair_modes(box: Box):
    """Flat indices of one representative per conjugate pair, excluding self-conjugate modes."""
    flat = np.arange(box.n_modes).reshape(box.shape)
    neg = box.neg_index(flat).reshape(-1)
    rep = np.nonzero(np.arange(box.n_modes) < neg)[0]
    return rep, neg[rep]


def synthesize_initial_difference(box: Box, model: CollisionModel, s0: float, amplitude: float,
                                  seed: int = 0) -> DistributionField:
    """Random-phase field with |f_hat(xi)|_{L^2_v} = |xi|^{-s0-d/2} on the resolvable shells.

    Velocity profiles are random unit vectors with a random macro part, so the
    dyadic profile 2^{j s0} |Delta_j f| is flat up to lattice counting effects.
    The result is scaled to |f|_{L^2_v(B^{s0}_{2,inf})} = amplitude.
    """
    grid = model.grid
    rng = np.random.Generator(np.random.Philox(seed))
    filt = dyadic_filter(box)
    res = np.array([j for j in filt.js if filt.resolved(j)])
    if res.size == 0:
        raise ValueError("no resolvable dyadic block on this box")
    r_max = min((8.0 / 3.0) * 2.0 ** res.max(), box.xi_nyquist)
    rep, neg = _pair_modes(box)
    r = box.xi_abs.reshape(-1)
    sel = (r[rep] > 0) & (r[rep] <= r_max) & np.all(
        np.abs(box.k_int.reshape(-1, box.d)[rep]) < box.n // 2, axis=-1)
    rep_ok, neg_ok = rep[sel], neg[sel]
    n = len(rep_ok)
    E = model.basis.vectors                                       # (5, N)
    macro = rng.standard_normal((n, 5)) @ E
    micro = project_P(rng.standard_normal((n, grid.size)) * model.sqrtM, grid)[1]
    prof = macro + micro
    prof /= np.sqrt(np.sum(prof ** 2, axis=1) * grid.cell_volume)[:, None]
    phase = np.exp(2j * np.pi * rng.random(n))
    # |a|^2 = |xi|^{-2 s0 - d}, then corrected block by block so the lattice count
    # in sparse shells does not distort 2^{j s0} |Delta_j f|
    a2 = r[rep_ok] ** (-2 * s0 - box.d)
    rows = np.searchsorted(filt.js, res)
    W2 = filt.weights_sq[rows][:, rep_ok]
    W = filt.weights[rows][:, rep_ok]
    target = 2.0 ** (-2 * s0 * res)
    for _ in range(200):
        ratio = target / (W2 @ a2)
        ratio /= ratio[-1]
        if np.max(np.abs(ratio - 1)) < 1e-10:
            break
        cover = W.sum(axis=0)
        a2 = a2 * np.where(cover > 0, (W.T @ ratio) / np.where(cover > 0, cover, 1), 1.0)
    amp = np.sqrt(a2)
    c = np.zeros((box.n_modes, grid.size), complex)
    c[rep_ok] = (amp * phase)[:, None] * prof
    c[neg_ok] = np.conj(c[rep_ok])
    c = c.reshape(box.shape + (grid.size,))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        norm = besov_norm(c, s0, math.inf, dv=grid.cell_volume, box=box)
    return DistributionField(box, grid, c * (amplitude / norm))


def shell_profile(f: DistributionField, s0: float):
    """2^{j s0} |Delta_j f|_{L^2} per resolved block j."""
    filt = dyadic_filter(f.box)
    B = np.sqrt(np.sum(block_norms(f.coeffs, f.box, f.dv) ** 2 * f.dv, axis=1))
    js = np.array(filt.js)
    ok = np.array([filt.resolved(j) for j in js])
    return js[ok], (2.0 ** (s0 * js) * B)[ok]


# ---------------------------------------------------------------- norm families

def difference_norms(c, box: Box, model: CollisionModel, s_list, N: int = 4, order: int = 4):
    """Norm families of a difference field (coefficients c)."""
    grid = model.grid
    dv = grid.cell_volume
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        hN1 = sobolev_norm(c, N - 1, dv=dv, box=box)
        for s in s_list:
            out[f"besov_s={s:g}"] = besov_norm(c, s, math.inf, dv=dv, box=box) + hN1
    micro = project_P(c, grid)[1]
    out["micro_l2"] = l2_norm(micro, box, dv)
    vw = np.sqrt(1.0 + np.sum(grid.nodes ** 2, axis=1))
    out["weighted"] = sobolev_norm(vw * c, 1, dv=dv, box=box) + sobolev_norm(vw * c, N - 2,
                                                                           dv=dv, box=box)
    xi = box.xi.reshape(box.n_modes, box.d)
    mixed = 0.0
    for k in range(1, N + 1):
        for b in multi_indices(k, 3):
            Pv = _power(dv_multi(micro, grid, b, order), box, True).sum(axis=1)
            for m in range(N - k + 1):
                for a in multi_indices(m, box.d):
                    w = np.prod(xi ** (2 * np.array(a)), axis=1)
                    mixed += math.sqrt(box.volume * dv * float(w @ Pv))
    out["mixed"] = mixed
    return out


def _fit(label, t, amp, window, expected):
    sigma, C, res = fit_algebraic(t, amp, window)
    return DecayFit(label, 0.0, "algebraic", sigma, expected, C, res, tuple(window),
                    list(t), list(amp))


def run_difference_decay(sc: StabilityScenario, cfg: SolverConfig, model: CollisionModel,
                         stepper: Stepper | None = None):
    """Evolve both solutions, record the norm families of f1 - f2, fit each algebraically.

    Returns (fits, series) with series[name] the sampled norms and series["t"] the times.
    """
    box = sc.f0_1.box
    st = stepper or Stepper(box, model, cfg)
    n_steps = int(round(sc.horizon / cfg.dt))
    marks = set(np.unique(np.geomspace(1, n_steps, sc.n_samples).astype(int)).tolist())
    a, b = sc.f0_1, sc.f0_2
    series = {"t": [0.0]}

    def record(c):
        for k, v in difference_norms(c, box, model, sc.targets, cfg.N, cfg.stencil_order).items():
            series.setdefault(k, []).append(v)

    record(a.coeffs - b.coeffs)
    for n in range(1, n_steps + 1):
        a = step(a, sc.E, cfg, st)
        b = step(b, sc.E, cfg, st)
        if n in marks:
            series["t"].append(n * cfg.dt)
            record(a.coeffs - b.coeffs)
    t = np.array(series["t"])
    window = sc.window or (sc.horizon / 4, sc.horizon)
    fits = []
    if np.all(np.array(series["micro_l2"]) == 0) and series[f"besov_s={sc.targets[0]:g}"][0] == 0:
        return [], {k: np.array(v) for k, v in series.items()}
    for s in sc.targets:
        fits.append(_fit(f"besov_s={s:g}", t, np.array(series[f"besov_s={s:g}"]), window,
                         (s - sc.s0) / 2))
    micro_rate = (1 - sc.eps - sc.s0) / 2
    for k in ("micro_l2", "weighted", "mixed"):
        fits.append(_fit(k, t, np.array(series[k]), window, micro_rate))
    return fits, {k: np.array(v) for k, v in series.items()}


def difference_fits_from_series(ser, name: str, s0: float, targets, window, N: int = 4):
    """Fit |g|_{B^s_{2,inf}} + |g|_{H^{N-1}} from a shell series of regularity s0."""
    t = np.asarray(ser.times, float)
    hN1 = ser.sobolev(name, N - 1)
    return [_fit(f"besov_s={s:g} s0={s0:g}", t, ser.norm(name, s) + hN1, window, (s - s0) / 2)
            for s in targets]


def run_difference_decay_linear(lin, box: Box, s0: float, targets, times, window=None,
                                N: int = 4, j0: int = -1, progress=None):
    """Small-amplitude d=3 variant: with E = 0 the difference obeys the linearized flow,
    evaluated mode by mode on symmetry orbits for shell data of regularity s0."""
    ser = besov_decay_series(lin, box, s0, j0, times, "low",
                             profiles={"generic": shell_profiles(lin)["generic"]},
                             progress=progress)
    t = np.asarray(times, float)
    window = window or (t[-1] / 4, t[-1])
    return difference_fits_from_series(ser, "generic", s0, targets, window, N), ser


def error_equation_residual(f1a, f1b, f2a, f2b, E: ForceField, stepper: Stepper, dt: float):
    """Discrete residual of the difference equation at the midpoint of one step.

    d_t g + v.grad g + L g - Gamma_sym(f1 + f2, g) + E.grad_v g - (1/2) E.v g, g = f1 - f2,
    where Gamma_sym(f1 + f2, g) = Gamma(f1, f1) - Gamma(f2, f2) exactly.
    """
    ga, gb = f1a.coeffs - f2a.coeffs, f1b.coeffs - f2b.coeffs
    g = 0.5 * (ga + gb)
    s = 0.5 * (f1a.coeffs + f1b.coeffs + f2a.coeffs + f2b.coeffs)
    t = 0.5 * (f1a.t + f1b.t)
    r = (gb - ga) / dt + stepper.D * g - g @ stepper.KT
    if stepper.cfg.nonlinear:
        r -= stepper.gamma_sym(s, g)
    if stepper.cfg.force_terms:
        r -= stepper.force_linear(g, t, E)
    return float(np.abs(r).max())
