"""Time integration of the perturbed Boltzmann equation on a periodic box.

    d_t f + v.grad_x f + L f = Gamma(f, f) - E.grad_v f + (1/2) E.v f + E.v sqrt(M)

Per Fourier mode the stiff diagonal D = i v.xi + nu is handled implicitly
(IMEX schemes) or the whole linear part -(i v.xi + L) is propagated exactly
(Strang).  K = nu - L, Gamma and the force terms are explicit.  Products in x
are evaluated pseudo-spectrally with 2/3-rule dealiasing.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .collision_ops import BudgetError, CollisionModel, macro_coefficients, project_P
from .fourier_lp import (Box, DistributionField, ResolutionWarning, besov_norm,
                         dyadic_filter, energy_norm, load_snapshot, low_high_split,
                         multi_indices, save_snapshot, sobolev_norm)
from .forcing import ForceField, SmallnessWarning, zero_field
from .velocity_fd import dv_multi, grad_v

SCHEMES = ("imex-euler", "imex-rk2", "strang")


class BlowUpError(RuntimeError):
    """The L2 norm grew by more than the guard factor within one step."""


class PositivityWarning(UserWarning):
    """F = M + sqrt(M) f dropped below -tol_pos at a sampled point."""


@dataclass
class SolverConfig:
    dt: float = 0.05
    scheme: str = "imex-rk2"
    N: int = 3                      # derivative order of the monitored norms
    stencil_order: int = 4          # velocity finite differences
    monitor_every: int = 10         # steps between trace records
    nonlinear: bool = True          # Gamma(f, f)
    force_terms: bool = True        # all three E-terms
    zero_mode: str = "free"         # "pin" restores the xi=0 macro moments after each step
    growth_guard: float = 10.0
    max_steps: int = 1_000_000
    c_stab: float = 40.0            # bound on dt * R * xi_max
    allow_3d_nonlinear: bool = False
    propagator_budget: float = 2.0e9    # bytes for cached Strang propagators
    delta0: float | None = None     # smallness threshold for |f0| + |E|
    tol_pos: float = 1e-12
    positivity_samples: int = 256
    C0: float | None = None         # uniform-bound constant to check against
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.N < 3:
            raise ValueError("N must be at least 3")
        if self.zero_mode not in ("free", "pin"):
            raise ValueError("zero_mode must be 'free' or 'pin'")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be >= 1")

    def check_cfl(self, box: Box, R: float):
        c = self.dt * R * box.xi_nyquist * math.sqrt(box.d)
        if c > self.c_stab:
            raise ValueError(f"dt * R * xi_max = {c:.3g} exceeds c_stab = {self.c_stab}")
        return c

    def physics_hash(self) -> str:
        keep = {k: v for k, v in asdict(self).items()
                if k in ("dt", "scheme", "nonlinear", "force_terms", "zero_mode", "stencil_order")}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- right-hand side

class Stepper:
    """Operators for one (box, grid) pair; owns nothing time-dependent."""

    def __init__(self, box: Box, model: CollisionModel, cfg: SolverConfig):
        if box.d == 3 and cfg.nonlinear and not cfg.allow_3d_nonlinear:
            raise BudgetError("nonlinear runs in d=3 need allow_3d_nonlinear=True")
        self.box, self.model, self.cfg = box, model, cfg
        self.grid = model.grid
        self.lin = model.linearized()
        cfg.check_cfl(box, self.grid.R)
        self.vxi = np.tensordot(box.xi, self.grid.nodes[:, :box.d].T, axes=([-1], [0]))
        self.nu = self.lin.nu
        self.KT = np.ascontiguousarray((np.diag(self.nu) - self.lin.L).T)
        self.D = 1j * self.vxi + self.nu                      # box.shape + (N,)
        k = np.abs(box.k_int)
        self.keep = np.all(3 * k < box.n, axis=-1)[..., None]  # 2/3 rule
        self.vs = self.grid.nodes * model.sqrtM[:, None]       # v sqrt(M), (N, 3)
        self._half = None

    def explicit(self, c, t, E: ForceField):
        """K f + Gamma + force terms."""
        return c @ self.KT + self.remainder(c, t, E)

    def remainder(self, c, t, E: ForceField):
        """Gamma(f, f) - E.grad_v f + (1/2) E.v f + E.v sqrt(M), dealiased."""
        cfg = self.cfg
        need_force = cfg.force_terms and not E.is_zero
        out = np.zeros_like(c)
        if not (cfg.nonlinear or need_force):
            return out
        f = self.physical(c)
        acc = np.zeros_like(f)
        if cfg.nonlinear:
            acc += self._gamma_phys(f)
        if need_force:
            acc += self._force_phys(f, t, E)
            out += self.source(t, E)
        return out + self.box.fft(acc, cfg.workers) * self.keep

    def physical(self, c):
        return self.box.ifft(c * self.keep, self.cfg.workers).real

    def _gamma_phys(self, f, g=None):
        flat = f.reshape(-1, f.shape[-1]).T
        other = None if g is None else g.reshape(-1, g.shape[-1]).T
        return self.model.gamma(flat, other, workers=self.cfg.workers).T.reshape(f.shape)

    def _force_phys(self, f, t, E):
        Ex = self.box.ifft(E.at(t, self.box) * self.keep, self.cfg.workers).real
        gv = grad_v(f, self.grid, self.cfg.stencil_order)                # (..., 3, N)
        return -np.einsum("...a,...an->...n", Ex, gv) + 0.5 * (Ex @ self.grid.nodes.T) * f

    def source(self, t, E):
        """E.v sqrt(M), undealiased (linear in E alone)."""
        return E.at(t, self.box) @ self.vs.T

    def gamma_sym(self, c1, c2):
        """(Gamma(f1, f2) + Gamma(f2, f1)) / 2 as dealiased coefficients."""
        f1, f2 = self.physical(c1), self.physical(c2)
        g = 0.5 * (self._gamma_phys(f1, f2) + self._gamma_phys(f2, f1))
        return self.box.fft(g, self.cfg.workers) * self.keep

    def force_linear(self, c, t, E):
        """-E.grad_v f + (1/2) E.v f as dealiased coefficients."""
        if E.is_zero:
            return np.zeros_like(c)
        return self.box.fft(self._force_phys(self.physical(c), t, E), self.cfg.workers) * self.keep

    def half_propagators(self):
        """exp(-(dt/2)(i v.xi + L)) for every mode, shape box.shape + (N, N)."""
        if self._half is None:
            box, N = self.box, self.grid.size
            need = 16.0 * box.n_modes * N * N
            if need > self.cfg.propagator_budget:
                raise BudgetError(f"Strang propagators need {need / 1e9:.2f} GB "
                                  f"> budget {self.cfg.propagator_budget / 1e9:.2f} GB")
            h = 0.5 * self.cfg.dt
            P = np.empty((box.n_modes, N, N), complex)
            vx = self.vxi.reshape(box.n_modes, N)
            done = np.zeros(box.n_modes, bool)
            neg = box.neg_index(np.arange(box.n_modes).reshape(box.shape)).reshape(-1)
            for m in range(box.n_modes):
                if done[m]:
                    continue
                P[m] = sla.expm(-h * (1j * np.diag(vx[m]) + self.lin.L))
                done[m] = True
                if not done[neg[m]]:
                    P[neg[m]] = P[m].conj()
                    done[neg[m]] = True
            self._half = P.reshape(box.shape + (N, N))
        return self._half

    def step(self, c, t, E):
        dt, s = self.cfg.dt, self.cfg.scheme
        if s == "imex-euler":
            return (c + dt * self.explicit(c, t, E)) / (1 + dt * self.D)
        if s == "imex-rk2":
            # ARS(2,2,2)
            g = 1 - 1 / math.sqrt(2)
            dl = 1 - 1 / (2 * g)
            G0 = self.explicit(c, t, E)
            Y1 = (c + g * dt * G0) / (1 + g * dt * self.D)
            G1 = self.explicit(Y1, t + g * dt, E)
            rhs = c + dl * dt * G0 + (1 - dl) * dt * G1 - (1 - g) * dt * self.D * Y1
            return rhs / (1 + g * dt * self.D)
        # Strang: exact linear half steps around Heun on the remainder
        P = self.half_propagators()
        a = np.einsum("...ij,...j->...i", P, c)
        n0 = self.remainder(a, t, E)
        n1 = self.remainder(a + dt * n0, t + dt, E)
        a = a + 0.5 * dt * (n0 + n1)
        return np.einsum("...ij,...j->...i", P, a)

    def residual(self, c, t, E, dcdt):
        """dc/dt - RHS(c): the discrete residual of the full equation."""
        return dcdt + self.D * c - self.explicit(c, t, E)


def _moments0(c, box, grid):
    return macro_coefficients(c[(0,) * box.d], grid)[0]


def step(f: DistributionField, E: ForceField, cfg: SolverConfig, stepper: Stepper | None = None,
         model: CollisionModel | None = None) -> DistributionField:
    if stepper is None:
        stepper = Stepper(f.box, model or CollisionModel(f.grid), cfg)
    before = f.l2()
    c = stepper.step(f.coeffs, f.t, E)
    if cfg.zero_mode == "pin":
        z = (0,) * f.box.d
        coef, Phi = macro_coefficients(c[z], f.grid)
        want = _moments0(f.coeffs, f.box, f.grid)
        c[z] += (want - coef) @ Phi
    g = DistributionField(f.box, f.grid, c, f.t + cfg.dt)
    after = g.l2()
    if not np.isfinite(after) or (before > 0 and after > cfg.growth_guard * before):
        raise BlowUpError(f"L2 norm {before:.3e} -> {after:.3e} at t={g.t:.4g}")
    return g


# ---------------------------------------------------------------- monitors

def positivity_check(f: DistributionField, sample_count: int = 256, seed: int = 0) -> float:
    """min of M + sqrt(M) f over sampled spatial points and all velocity nodes."""
    from .velocity_space import maxwellian
    M = maxwellian(f.grid.nodes)
    phys = f.physical().reshape(-1, f.grid.size)
    if sample_count < phys.shape[0]:
        rng = np.random.Generator(np.random.Philox(seed))
        phys = phys[rng.choice(phys.shape[0], sample_count, replace=False)]
    return float(np.min(M + np.sqrt(M) * phys))


def _mode_power(c, box):
    """L^d |c|^2 per (mode, velocity node)."""
    return box.volume * (np.abs(c) ** 2).reshape(box.n_modes, -1)


def _xi_weight(box, k):
    xi2 = (box.xi_abs ** 2).reshape(-1)
    return np.ones_like(xi2) if k == 0 else xi2 ** k


def hypocoercive_functionals(f: DistributionField, N: int = 3, order: int = 4):
    """(E^H, D^H) with every group weighted by one.

    E^H = |nu micro|^2_{H1 cap H^{N-1}} + |micro|^2 + |f|^2_{H1 cap H^N} + mixed micro terms
    D^H = |nu^{3/2} micro|^2_{H1 cap H^{N-1}} + sum_{l<=N} |grad^l micro|_nu^2 + mixed_nu
    """
    box, grid = f.box, f.grid
    dv = grid.cell_volume
    nu = grid_nu(grid)
    micro = project_P(f.coeffs, grid)[1]
    Pm = _mode_power(micro, box) * dv
    Pf = _mode_power(f.coeffs, box).sum(axis=1) * dv

    def hd(P_modes, k):
        return float(_xi_weight(box, k) @ P_modes)

    EH = (sum(hd(Pm @ nu ** 2, k) for k in (1, N - 1)) + hd(Pm.sum(axis=1), 0)
          + sum(hd(Pf, k) for k in (1, N)))
    DH = (sum(hd(Pm @ nu ** 3, k) for k in (1, N - 1))
          + sum(hd(Pm @ nu, k) for k in range(N + 1)))
    xi = box.xi.reshape(box.n_modes, box.d)
    for b in (b for k in range(1, N + 1) for b in multi_indices(k, 3)):
        P = _mode_power(dv_multi(micro, grid, b, order), box) * dv
        w = sum(np.prod(xi ** (2 * np.array(a)), axis=1)
                for k in range(N - sum(b) + 1) for a in multi_indices(k, box.d))
        EH += float(w @ P.sum(axis=1))
        DH += float(w @ (P @ nu))
    return EH, DH


def grid_nu(grid):
    from .velocity_space import collision_frequency
    return collision_frequency(grid.nodes, grid)


def macro_energies(f: DistributionField):
    """|a|^2, |b|^2, |c|^2 in L2_x."""
    box = f.box
    coef = macro_coefficients(f.coeffs, f.grid)[0]           # (5,) + box.shape
    p = box.volume * np.abs(coef.reshape(5, -1)) ** 2
    return float(p[0].sum()), float(p[1:4].sum()), float(p[4].sum())


def moment_functional(f: DistributionField, k: int):
    """The interactive functional pairing micro moments with gradients of (a, b, c).

    zeta_a = v sqrt(M), zeta_ij = (v_i v_j - delta_ij) sqrt(M), zeta_c = v (|v|^2 - 5) sqrt(M).
    """
    box, grid = f.box, f.grid
    dv = grid.cell_volume
    V = grid.nodes
    sq = np.sqrt(np.exp(-0.5 * np.sum(V * V, axis=1)) / (2 * np.pi) ** 1.5)
    coef = macro_coefficients(f.coeffs, grid)[0].reshape(5, -1)
    a, b, cc = coef[0], coef[1:4], coef[4]
    micro = project_P(f.coeffs, grid)[1].reshape(box.n_modes, -1)
    xi = np.zeros((box.n_modes, 3))
    xi[:, :box.d] = box.xi.reshape(box.n_modes, box.d)
    w = sum(np.prod(xi[:, :box.d] ** (2 * np.array(al)), axis=1)
            for al in multi_indices(k, box.d)) if k > 0 else np.ones(box.n_modes)
    za = micro @ (V * sq[:, None]) * dv                           # (modes, 3)
    zc = micro @ (V * ((np.sum(V * V, axis=1) - 5) * sq)[:, None]) * dv
    zij = np.einsum("mn,ni,nj->mij", micro, V, V * sq[:, None]) * dv
    zij -= np.einsum("mn,n->m", micro, sq)[:, None, None] * dv * np.eye(3)
    ixi = 1j * xi
    tot = np.einsum("mi,mi->m", za, np.conj(ixi * a[:, None]))
    tot += np.einsum("mij,mj,im->m", zij, np.conj(ixi), np.conj(b))
    tot += np.einsum("mi,mi->m", zc, np.conj(ixi * cc[:, None]))
    tot += np.einsum("im,mi->m", b, np.conj(ixi * a[:, None]))
    return float(box.volume * np.real(w @ tot))


# ---------------------------------------------------------------- trace

TRACE_COLUMNS = ("t", "energy", "EH", "DH", "mass", "momentum", "heat", "min_F", "l2",
                 "fL_besov_sq", "force_sq")


@dataclass
class EnergyTrace:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    path: Path | None = None

    def append(self, row: dict):
        vals = [float(row[c]) for c in TRACE_COLUMNS]
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite trace entry at t={row['t']}")
        if self.rows and vals[0] <= self.rows[-1][0]:
            raise ValueError("trace times must increase strictly")
        self.rows.append(vals)
        if self.path is not None:
            new = not self.path.exists()
            with open(self.path, "a", newline="") as fh:
                w = csv.writer(fh)
                if new:
                    w.writerow(TRACE_COLUMNS)
                w.writerow([repr(v) for v in vals])

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        i = TRACE_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    @classmethod
    def read_csv(cls, path):
        tr = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                tr.rows.append([float(row[c]) for c in TRACE_COLUMNS])
        return tr


def trace_row(f: DistributionField, E: ForceField, cfg: SolverConfig, j0: int = -1) -> dict:
    box = f.box
    EH, DH = hypocoercive_functionals(f, cfg.N, cfg.stencil_order)
    mass, mom, heat = macro_energies(f)
    low = low_high_split(f, max(j0, dyadic_filter(box).j_min))[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        fl = besov_norm(low.coeffs, 0.5, math.inf, dv=f.dv, box=box)
    Ec = E.at(f.t, box)
    force_sq = float(sum(sobolev_norm(Ec, k, box=box) ** 2 for k in range(cfg.N + 1)))
    return {"t": f.t, "energy": energy_norm(f, 0.5, cfg.N, order=cfg.stencil_order)["total"],
            "EH": EH, "DH": DH, "mass": mass, "momentum": mom, "heat": heat,
            "min_F": positivity_check(f, cfg.positivity_samples), "l2": f.l2(),
            "fL_besov_sq": fl ** 2, "force_sq": force_sq}


# ---------------------------------------------------------------- driver

def _checkpoint_paths(path):
    p = Path(path)
    return p.with_suffix(".snap"), p.with_suffix(".json")


def write_checkpoint(path, f: DistributionField, cfg: SolverConfig, n_steps: int):
    snap, side = _checkpoint_paths(path)
    save_snapshot(snap, f)
    side.write_text(json.dumps({"config_hash": cfg.physics_hash(), "steps": n_steps,
                                "t": f.t}, indent=1))


def read_checkpoint(path, cfg: SolverConfig):
    snap, side = _checkpoint_paths(path)
    info = json.loads(side.read_text())
    if info["config_hash"] != cfg.physics_hash():
        raise ValueError("checkpoint was written with a different solver configuration")
    return load_snapshot(snap), int(info["steps"])


def force_norm(E: ForceField, box: Box, N: int) -> float:
    from .forcing import force_norm_report
    if E.is_zero:
        return 0.0
    return force_norm_report(E, box, N=N)["total"]


def solve(f0: DistributionField, E: ForceField | None, cfg: SolverConfig, t_end: float,
          model: CollisionModel | None = None, trace_path=None, checkpoint=None,
          checkpoint_every: int = 0, resume: bool = False, stepper: Stepper | None = None,
          callback=None):
    """Integrate to t_end; returns (field, EnergyTrace).

    ``callback(f)`` is called after every step with the current field (read-only use).
    """
    E = E or zero_field()
    stepper = stepper or Stepper(f0.box, model or CollisionModel(f0.grid), cfg)
    f, done = f0, 0
    if resume and checkpoint is not None and _checkpoint_paths(checkpoint)[1].exists():
        f, done = read_checkpoint(checkpoint, cfg)
    n_total = int(round((t_end - f0.t) / cfg.dt))
    if n_total > cfg.max_steps:
        raise BudgetError(f"{n_total} steps exceed max_steps={cfg.max_steps}")
    trace = EnergyTrace(path=Path(trace_path) if trace_path else None)
    if trace.path is not None and trace.path.exists() and not (resume and done):
        trace.path.unlink()
    if resume and done and trace.path is not None and trace.path.exists():
        trace.rows = EnergyTrace.read_csv(trace.path).rows

    e0 = energy_norm(f0, 0.5, cfg.N, order=cfg.stencil_order)["total"]
    fE = force_norm(E, f0.box, cfg.N)
    if cfg.delta0 is not None and e0 + fE > cfg.delta0:
        warnings.warn(f"initial data + force norm {e0 + fE:.3e} exceeds delta0={cfg.delta0}",
                      SmallnessWarning, stacklevel=2)
    if not trace.rows:
        trace.append(trace_row(f, E, cfg))
    for n in range(done, n_total):
        f = step(f, E, cfg, stepper)
        f.t = f0.t + (n + 1) * cfg.dt
        if callback is not None:
            callback(f)
        if (n + 1) % cfg.monitor_every == 0 or n + 1 == n_total:
            trace.append(trace_row(f, E, cfg))
        if checkpoint is not None and checkpoint_every and (n + 1) % checkpoint_every == 0:
            write_checkpoint(checkpoint, f, cfg, n + 1)

    minF = float(trace.column("min_F").min())
    if minF < -cfg.tol_pos:
        warnings.warn(f"positivity monitor: min F = {minF:.3e}", PositivityWarning, stacklevel=2)
    sup = float(trace.column("energy").max())
    ref = e0 + fE
    C0 = sup / ref if ref > 0 else 0.0
    trace.meta.update({"energy0": e0, "force_norm": fE, "sup_energy": sup, "C0_measured": C0,
                       "min_F": minF, "steps": n_total, "config": asdict(cfg),
                       "uniform_bound_ok": None if cfg.C0 is None else bool(C0 <= cfg.C0)})
    if cfg.C0 is not None and C0 > cfg.C0:
        warnings.warn(f"uniform bound violated: measured C0={C0:.3g} > {cfg.C0}", stacklevel=2)
    return f, trace


# ---------------------------------------------------------------- Lyapunov check

def lyapunov_monitor(trace: EnergyTrace, c_ratio: float = 2.0, lambdas=None) -> dict:
    """Check dE^H/dt + lam E^H <= C (sup|E|^2_{H^N} + |f_L|^2_{B^{1/2}}) along the trace.

    C(lam) is the smallest constant valid at every sample and grows with lam.  The
    reported ``lambda`` is the largest lam with C(lam) <= c_ratio * C(0); when C(0) = 0
    this is the largest rate of pure decay.  ``binding`` names the right-hand term that
    is larger at the sample fixing C.
    """
    if len(trace) < 10:
        raise ValueError("Lyapunov check needs at least 10 trace samples")
    t = trace.column("t")
    E = trace.column("EH")
    dE = np.gradient(E, t)
    force = np.maximum.accumulate(trace.column("force_sq"))
    low = trace.column("fL_besov_sq")
    R = force + low
    if E.max() == 0 and R.max() == 0:
        return {"lambda": math.inf, "C": 0.0, "lambda_free": math.inf, "binding": "none",
                "trivial": True}
    tiny = 1e-14 * float(max(E.max(), R.max()))

    def C_of(lam):
        lhs = dE + lam * E
        bad = lhs > tiny
        if np.any(bad & (R <= tiny)):
            return math.inf, None
        r = np.where(bad, lhs / np.where(R > tiny, R, 1.0), 0.0)
        i = int(np.argmax(r))
        return float(r[i]), i

    if lambdas is None:
        pos = E > tiny
        top = float(np.max(np.abs(dE[pos]) / E[pos])) if np.any(pos) else 1.0
        lambdas = np.linspace(0.0, max(2 * top, 1e-6), 2001)
    curve = np.array([C_of(l)[0] for l in lambdas])
    cap = c_ratio * curve[0]
    ok = lambdas[curve <= cap]
    lam = float(ok.max()) if ok.size else 0.0
    C, i = C_of(lam)
    free = lambdas[curve == 0.0]
    binding = "none"
    if i is not None and C > 0:
        binding = "force" if force[i] >= low[i] else "low_frequency"
    return {"lambda": lam, "C": C, "C0": float(curve[0]), "trivial": False,
            "lambda_free": float(free.max()) if free.size else 0.0, "binding": binding,
            "force_dominates": bool(np.all(force >= low)) if force.max() > 0 else False,
            "lambdas": lambdas.tolist(), "C_curve": curve.tolist()}
