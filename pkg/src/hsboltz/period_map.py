"""Time-periodic solutions by iterating the period map from zero data.

f_*((n+1)T) is obtained by integrating one period from f_*(nT) with the local
clock reset to 0, so the iteration is literally the composition of one map.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .cauchy_solver import SolverConfig, Stepper, step
from .collision_ops import CollisionModel
from .forcing import ForceField, potential_field
from .fourier_lp import (Box, DistributionField, ResolutionWarning, besov_norm, chi,
                         dyadic_filter, save_snapshot, sobolev_norm)
from .linear_semigroup import DecayFit, besov_decay_series, fit_algebraic, shell_profiles
from .velocity_space import maxwellian


class ConvergenceWarning(UserWarning):
    """The period-map iteration stopped at n_max without reaching tol."""


def convergence_norm(f: DistributionField | np.ndarray, box: Box, dv: float, eps: float = 0.1,
                     N: int = 3) -> float:
    """|g|_{L^2_v(B^{1-eps}_{2,inf})} + |g|_{L^2_v(H^{N-1})}."""
    c = f.coeffs if isinstance(f, DistributionField) else f
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        b = besov_norm(c, 1.0 - eps, math.inf, dv=dv, box=box)
    return float(b + sobolev_norm(c, N - 1, dv=dv, box=box))


@dataclass
class PeriodMapReport:
    T: float
    eps: float
    tol: float
    n: list = field(default_factory=list)
    norms: list = field(default_factory=list)       # |f_*(nT)| in the convergence norm
    d: list = field(default_factory=list)           # |f_*((n+1)T) - f_*(nT)|
    converged: bool = False
    n_converged: int | None = None
    envelope_exponent: float | None = None          # fitted p in d_n ~ (1 + nT)^{-p}
    envelope_constant: float | None = None
    contraction: float | None = None                # geometric-mean ratio d_{n+1}/d_n
    residual: float | None = None

    def __post_init__(self):
        if any(x < 0 for x in self.d):
            raise ValueError("differences must be nonnegative")
        if any(b <= a for a, b in zip(self.n, self.n[1:])):
            raise ValueError("iterate indices must increase")

    @property
    def expected_exponent(self):
        return 0.25 - self.eps / 2

    def envelope(self):
        if self.envelope_constant is None:
            return [math.nan] * len(self.n)
        return [self.envelope_constant * (1 + k * self.T) ** -self.expected_exponent
                for k in self.n]

    def monotone_after(self, n0: int = 2) -> bool:
        dd = [x for k, x in zip(self.n, self.d) if k >= n0]
        return all(b <= a for a, b in zip(dd, dd[1:]))

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["n", "norm", "d_n", "envelope"])
        for row in zip(self.n, self.norms, self.d, self.envelope()):
            w.writerow([repr(float(x)) if not isinstance(x, int) else x for x in row])
        return buf.getvalue()


class PeriodMap:
    """One-period integration with a fixed stepper."""

    def __init__(self, box: Box, model: CollisionModel, E: ForceField, cfg: SolverConfig,
                 period: float | None = None):
        T = E.period if period is None else period
        if not (T > 0 and math.isfinite(T)):
            raise ValueError("a finite period is required (pass period= for stationary forces)")
        n = T / cfg.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"period {T} is not a multiple of dt={cfg.dt}")
        self.T, self.steps = T, int(round(n))
        self.box, self.model, self.E, self.cfg = box, model, E, cfg
        self.stepper = Stepper(box, model, cfg)

    def __call__(self, f: DistributionField) -> DistributionField:
        g = DistributionField(f.box, f.grid, f.coeffs, 0.0)
        for j in range(self.steps):
            g = step(g, self.E, self.cfg, self.stepper)
            g.t = (j + 1) * self.cfg.dt
        return DistributionField(f.box, f.grid, g.coeffs, f.t + self.T)

    def norm(self, f, eps):
        return convergence_norm(f, self.box, self.model.grid.cell_volume, eps, self.cfg.N)


def _fit_envelope(rep: PeriodMapReport):
    n = np.array(rep.n, float)
    d = np.array(rep.d)
    ok = d > 0
    if ok.sum() >= 3:
        x, y = np.log1p(n[ok] * rep.T), np.log(d[ok])
        rep.envelope_exponent = float(-np.polyfit(x, y, 1)[0])
        # smallest constant for which the expected envelope dominates every d_n
        rep.envelope_constant = float(np.max(d[ok] * (1 + n[ok] * rep.T) ** rep.expected_exponent))
        r = d[ok][1:] / d[ok][:-1]
        rep.contraction = float(np.exp(np.mean(np.log(r))))


def serrin_iterate(E: ForceField, cfg: SolverConfig, box: Box, model: CollisionModel,
                   n_max: int = 200, tol: float = 1e-9, eps: float = 0.1,
                   period: float | None = None, f0: DistributionField | None = None,
                   pmap: PeriodMap | None = None, snapshot=None):
    """Iterate f_{n+1} = Map(f_n) from f_0 (default 0); stop when d_n < tol.

    Returns (last iterate, report).
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    pmap = pmap or PeriodMap(box, model, E, cfg, period)
    f = f0 if f0 is not None else DistributionField.zeros(box, model.grid)
    f = pmap(f)                                            # f_*(T)
    rep = PeriodMapReport(pmap.T, eps, tol)
    for n in range(1, n_max + 1):
        g = pmap(f)
        dn = pmap.norm(g.coeffs - f.coeffs, eps)
        rep.n.append(n)
        rep.norms.append(pmap.norm(f, eps))
        rep.d.append(dn)
        f = g
        if dn < tol:
            rep.converged, rep.n_converged = True, n
            break
    _fit_envelope(rep)
    if not rep.converged:
        warnings.warn(f"period map did not converge in {n_max} periods; "
                      f"last d_n = {rep.d[-1]:.3e}", ConvergenceWarning, stacklevel=2)
    if snapshot is not None:
        save_snapshot(snapshot, f)
    return f, rep


def verify_periodicity(f_T0: DistributionField, E: ForceField, cfg: SolverConfig,
                       model: CollisionModel, eps: float = 0.1, period: float | None = None,
                       pmap: PeriodMap | None = None) -> float:
    pmap = pmap or PeriodMap(f_T0.box, model, E, cfg, period)
    g = pmap(f_T0)
    return pmap.norm(g.coeffs - f_T0.coeffs, eps)


# ---------------------------------------------------------------- stationary oracle

def stationary_reference(phi_values, grid):
    """e^{-phi} M scaled to the mass of M (the iteration from 0 conserves mass)."""
    w = np.exp(-np.asarray(phi_values))
    w = w / w.mean()
    M = maxwellian(grid.nodes)
    return w[..., None] * M


def stationary_oracle(phi, cfg: SolverConfig, box: Box, model: CollisionModel,
                      period: float = 5.0, n_max: int = 200, tol: float = 1e-9,
                      eps: float = 0.1) -> dict:
    """Converge the period map for E = -grad phi and compare F = M + sqrt(M) f_T with e^{-phi}M.

    The zero mode is pinned, so the limit has the conserved moments of the reference.
    ``error`` is |F - F_ref| / |F_ref| in L^2_{x,v}; ``error_perturbation`` divides by the
    size of the exact perturbation F_ref - M instead.
    """
    E = potential_field(phi)
    # the free zero mode keeps total energy, whose limit is hotter than e^{-phi}M by O(var phi)
    cfg = replace(cfg, zero_mode="pin")
    f, rep = serrin_iterate(E, cfg, box, model, n_max, tol, eps, period=period)
    grid = model.grid
    Fref = stationary_reference(phi(box), grid)
    M = maxwellian(grid.nodes)
    F = M + np.sqrt(M) * f.physical()
    num = np.linalg.norm(F - Fref)
    den = np.linalg.norm(Fref)
    pert = np.linalg.norm(Fref - M)
    return {"error": float(num / den),
            "error_perturbation": float(num / pert) if pert > 0 else float(num),
            "phi_max": float(np.abs(phi(box)).max()), "converged": rep.converged,
            "n": rep.n_converged, "report": rep, "field": f}


# ---------------------------------------------------------------- return to the periodic state

def lp_exponent(p: float, s: float, d: int = 3) -> float:
    """Decay exponent s/2 + (d/2)(1/p - 1/2) of |f - f_T|_{L^2_v(H^s)} for L^p data."""
    return s / 2 + (d / 2) * (1 / p - 0.5)


def lp_perturbation(box: Box, model: CollisionModel, p: float, amplitude: float,
                    xi_cut: float | None = None) -> DistributionField:
    """a(xi) psi(v) with |a| = |xi|^{-d(1-1/p)} chi(|xi| / xi_cut): the low-frequency
    profile of an L^p function that is in no L^q with q < p; smooth and band-limited."""
    if not 1 < p <= 2:
        raise ValueError("p must lie in (1, 2]")
    lin = model.linearized()
    psi = shell_profiles(lin)["generic"](None)
    r = box.xi_abs
    xi_cut = xi_cut or box.xi_nyquist / 2
    a = np.where(r > 0, np.power(np.where(r > 0, r, 1.0), -box.d * (1 - 1 / p)), 0.0)
    a *= chi(r / xi_cut)
    a[np.any(np.abs(box.k_int) == box.n // 2, axis=-1)] = 0.0
    c = a[..., None] * psi
    f = DistributionField(box, model.grid, c.astype(complex))
    return DistributionField(box, model.grid, amplitude * c / f.l2())


def perturbation_return(f_T0: DistributionField, E: ForceField, g0: DistributionField,
                        cfg: SolverConfig, model: CollisionModel, t_end: float, s: float,
                        p: float, n_samples: int = 40, window=None) -> DecayFit:
    """Evolve f_T0 and f_T0 + g0 under E and fit |difference|_{L^2_v(H^s)} algebraically."""
    box = f_T0.box
    st = Stepper(box, model, cfg)
    n_steps = int(round(t_end / cfg.dt))
    marks = set(np.unique(np.geomspace(1, n_steps, n_samples).astype(int)).tolist())
    a = f_T0
    b = DistributionField(box, f_T0.grid, f_T0.coeffs + g0.coeffs, f_T0.t)
    dv = model.grid.cell_volume
    t, amp = [0.0], [sobolev_norm(g0.coeffs, s, dv=dv, box=box)]
    for n in range(1, n_steps + 1):
        a = step(a, E, cfg, st)
        b = step(b, E, cfg, st)
        if n in marks:
            t.append(n * cfg.dt)
            amp.append(sobolev_norm(b.coeffs - a.coeffs, s, dv=dv, box=box))
    t, amp = np.array(t), np.array(amp)
    window = window or (t[-1] / 4, t[-1])
    sigma, C, res = fit_algebraic(t, amp, window)
    return DecayFit(f"return p={p:g} s={s:g}", s, "algebraic", sigma, lp_exponent(p, s, box.d),
                    C, res, tuple(window), list(t), list(amp))


def lp_return_fit(ser, name: str, p: float, s: float, d: int, window=None) -> DecayFit:
    """Fit |g(t)|_{H^s} from a shell series whose data has the L^p profile (s0 = d/2 - d/p)."""
    t = np.asarray(ser.times, float)
    amp = ser.sobolev(name, s)
    window = window or (t[-1] / 4, t[-1])
    sigma, C, res = fit_algebraic(t, amp, window)
    return DecayFit(f"return_linear p={p:g} s={s:g}", s, "algebraic", sigma, lp_exponent(p, s, d),
                    C, res, tuple(window), list(t), list(amp))


def perturbation_return_linear(lin, box: Box, p: float, s: float, times, window=None,
                               j0: int | None = None, progress=None) -> DecayFit:
    """Small-perturbation return with E = 0 (f_T = 0): the difference follows the
    linearized flow, evaluated exactly mode by mode on symmetry orbits."""
    s0 = box.d / 2 - box.d / p
    j0 = dyadic_filter(box).j_max + 1 if j0 is None else j0
    ser = besov_decay_series(lin, box, s0, j0=j0, times=times, part="low",
                             profiles={"generic": shell_profiles(lin)["generic"]},
                             progress=progress)
    return lp_return_fit(ser, "generic", p, s, box.d, window)
