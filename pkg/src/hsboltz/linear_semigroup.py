"""Per-mode linearized propagator e^{tB(xi)}, B(xi) = -i v.xi - L, and decay fits.

B(xi) is similar to a real matrix: in the basis of inversion-even/odd velocity
functions L is block diagonal and v.xi is block off-diagonal, so conjugating
the odd block by i removes every imaginary unit.  Eigendecompositions use
that real form.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla

from .collision_ops import LinearizedOperator, project_P
from .fourier_lp import Box, chi, dyadic_filter


class KrylovError(RuntimeError):
    """Krylov propagation could not meet its residual tolerance."""


# ---------------------------------------------------------------- parity form

class ParityForm:
    """Even/odd blocks of L under v -> -v (node i <-> N-1-i)."""

    def __init__(self, lin: LinearizedOperator):
        L = lin.L
        N = L.shape[0]
        h = N // 2
        R = L[:, ::-1]                       # columns reflected
        A, B = L[:h, :h], R[:h, :h]          # L[i, j] and L[i, N-1-j]
        self.h = h
        self.L_even = A + B                  # blocks in the normalized even/odd basis
        self.L_odd = A - B
        self.nodes = lin.grid.nodes

    @staticmethod
    def split(f):
        f = np.asarray(f)
        h = f.shape[0] // 2
        r = f[::-1][:h]
        return (f[:h] + r) / np.sqrt(2), (f[:h] - r) / np.sqrt(2)

    @staticmethod
    def join(fe, fo):
        top = (fe + fo) / np.sqrt(2)
        bot = ((fe - fo) / np.sqrt(2))[::-1]
        return np.concatenate([top, bot])

    def real_matrix(self, xi, sign: float = 1.0):
        """Real form of -i sign v.xi - L acting on (f_e, f_o / i)."""
        d = self.nodes[:self.h] @ _xi3(xi) * sign
        h = self.h
        M = np.empty((2 * h, 2 * h))
        M[:h, :h] = -self.L_even
        M[h:, h:] = -self.L_odd
        M[:h, h:] = np.diag(d)
        M[h:, :h] = -np.diag(d)
        return M


def _xi3(xi):
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.zeros(3)
    out[:xi.size] = xi
    return out


# ---------------------------------------------------------------- mode operator

@dataclass
class ModeOperator:
    xi: np.ndarray
    lin: LinearizedOperator
    adjoint: bool = False
    _parity: ParityForm | None = field(default=None, repr=False)
    _eig: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.xi = _xi3(self.xi)

    @property
    def parity(self):
        if self._parity is None:
            self._parity = ParityForm(self.lin)
        return self._parity

    @property
    def sign(self):
        return -1.0 if self.adjoint else 1.0

    def matrix(self):
        v_xi = self.lin.grid.nodes @ self.xi
        return -1j * self.sign * np.diag(v_xi) - self.lin.L

    def apply(self, f):
        f = np.asarray(f)
        v_xi = self.lin.grid.nodes @ self.xi
        vx = v_xi if f.ndim == 1 else v_xi[:, None]
        return -1j * self.sign * vx * f - self.lin.L @ f

    def eig(self):
        """(lam, V, Vinv) of the real form."""
        if self._eig is None:
            M = self.parity.real_matrix(self.xi, self.sign)
            lam, V = sla.eig(M, overwrite_a=True, check_finite=False)
            self._eig = (lam, V, np.linalg.inv(V))
        return self._eig

    def spectrum(self):
        return self.eig()[0]

    def abscissa(self):
        return float(np.max(self.spectrum().real))

    def _to_real(self, f):
        fe, fo = ParityForm.split(np.asarray(f, dtype=complex))
        return np.concatenate([fe, fo / 1j])

    def _from_real(self, y):
        h = self.parity.h
        return ParityForm.join(y[:h], 1j * y[h:])

    def propagate_many(self, f0, times):
        """e^{tB} f0 for each t, shape (len(times), N)."""
        lam, V, Vi = self.eig()
        c = Vi @ self._to_real(f0)
        E = np.exp(np.outer(lam, np.asarray(times, dtype=float)))
        Y = V @ (c[:, None] * E)
        h = self.parity.h
        top = (Y[:h] + 1j * Y[h:]) / np.sqrt(2)
        bot = ((Y[:h] - 1j * Y[h:]) / np.sqrt(2))[::-1]
        return np.concatenate([top, bot]).T


def propagate_mode(op: ModeOperator, f0, t: float, method: str = "expm", **kw):
    """e^{tB(xi)} f0 by scaling-and-squaring ("expm"), eigenvectors ("eig") or Krylov."""
    if t < 0:
        raise ValueError("propagation time must be nonnegative")
    f0 = np.asarray(f0, dtype=complex)
    if t == 0:
        return f0.copy()
    if method == "expm":
        return sla.expm(t * op.matrix()) @ f0
    if method == "eig":
        return op.propagate_many(f0, [t])[0]
    if method == "krylov":
        return expv(op.apply, f0, t, **kw)
    raise ValueError(f"unknown propagation method {method!r}")


def expv(apply, b, t, m: int = 30, tol: float = 1e-10, max_steps: int = 10000):
    """exp(tA) b by restarted Arnoldi with a posteriori substep control.

    Each substep uses Saad's corrected approximation; its error is estimated by
    the next Krylov term and the substep is halved until that estimate is
    below ``tol * |b| * tau / t``.
    """
    b = np.asarray(b, dtype=complex)
    beta0 = np.linalg.norm(b)
    if beta0 == 0 or t == 0:
        return b.copy()
    n = b.size
    m = min(m, n - 1) if n > 1 else 1
    w = b.copy()
    t_done, tau, steps = 0.0, float(t), 0
    while t_done < t:
        beta = np.linalg.norm(w)
        if beta == 0:
            break
        V = np.zeros((n, m + 1), dtype=complex)
        H = np.zeros((m + 2, m + 2), dtype=complex)
        V[:, 0] = w / beta
        k, happy = m, False
        for j in range(m):
            p = apply(V[:, j])
            for _ in range(2):                      # Gram-Schmidt twice
                c = V[:, :j + 1].conj().T @ p
                H[:j + 1, j] += c
                p = p - V[:, :j + 1] @ c
            hn = np.linalg.norm(p)
            if hn <= 1e-13 * np.abs(H[:j + 1, :j + 1]).max(initial=1.0):
                k, happy = j + 1, True
                break
            H[j + 1, j] = hn
            V[:, j + 1] = p / hn
        tau = min(tau, t - t_done)
        while True:
            steps += 1
            if steps > max_steps:
                raise KrylovError(f"Krylov propagation needed more than {max_steps} substeps")
            if happy:
                y = beta * sla.expm(tau * H[:k, :k])[:, 0]
                w_new = V[:, :k] @ y
                break
            Hx = np.zeros((k + 2, k + 2), dtype=complex)
            Hx[:k + 1, :k] = H[:k + 1, :k]
            Hx[k + 1, k] = 1.0
            F = sla.expm(tau * Hx)
            err = beta * abs(F[k + 1, 0])
            if err <= tol * beta0 * tau / t:
                w_new = V[:, :k + 1] @ (beta * F[:k + 1, 0])
                break
            tau *= 0.5
            if tau < 1e-14 * t:
                raise KrylovError(f"Krylov residual {err:.3e} above tolerance at minimal step")
        w = w_new
        t_done += tau
        tau = 2 * tau
    if not np.all(np.isfinite(w)):
        raise KrylovError("Krylov propagation produced non-finite values")
    return w


# ---------------------------------------------------------------- fits

@dataclass
class DecayFit:
    label: str
    x: float                     # |xi| or s
    kind: str                    # "exponential" or "algebraic"
    fitted_rate: float
    expected_rate: float
    prefactor: float
    residual: float
    window: tuple
    t: list = field(default_factory=list, repr=False)
    amp: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not np.isfinite(self.fitted_rate):
            raise ValueError(f"fit {self.label}: non-finite exponent")

    def as_row(self):
        return [self.label, self.x, self.fitted_rate, self.expected_rate, self.residual]


def fit_exponential(t, amp, window):
    """Least squares log(amp) = log(C) - rate t on the window; returns (rate, C, rms)."""
    t, amp = np.asarray(t, float), np.asarray(amp, float)
    sel = (t >= window[0]) & (t <= window[1]) & (amp > 0)
    if sel.sum() < 3:
        raise ValueError("fewer than three samples in the fit window")
    A = np.stack([np.ones(sel.sum()), -t[sel]], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(amp[sel]), rcond=None)
    res = np.log(amp[sel]) - A @ coef
    return float(coef[1]), float(np.exp(coef[0])), float(np.sqrt(np.mean(res ** 2)))


def fit_algebraic(t, amp, window):
    """Least squares log(amp) = log(C) - sigma log(1+t) on the window."""
    t, amp = np.asarray(t, float), np.asarray(amp, float)
    sel = (t >= window[0]) & (t <= window[1]) & (amp > 0)
    if sel.sum() < 3:
        raise ValueError("fewer than three samples in the fit window")
    x = np.log1p(t[sel])
    A = np.stack([np.ones_like(x), -x], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(amp[sel]), rcond=None)
    res = np.log(amp[sel]) - A @ coef
    return float(coef[1]), float(np.exp(coef[0])), float(np.sqrt(np.mean(res ** 2)))


def fits_to_csv(fits) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "x", "fitted_rate", "expected_rate", "residual"])
    for f in fits:
        w.writerow([f.label] + [repr(float(v)) for v in f.as_row()[1:]])
    return buf.getvalue()


def fits_to_json(fits) -> str:
    out = []
    for f in fits:
        d = asdict(f)
        d["t"] = [float(v) for v in d["t"]]
        d["amp"] = [float(v) for v in d["amp"]]
        d["window"] = [float(v) for v in d["window"]]
        out.append(d)
    return json.dumps(out, indent=1, sort_keys=True)


# ---------------------------------------------------------------- pointwise decay

def default_f0(lin, seed=0, micro=False):
    rng = np.random.Generator(np.random.Philox(seed))
    N = lin.grid.size
    f = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    if micro:
        f = project_P(f, lin.grid)[1]
    return f / np.linalg.norm(f)


def mode_amplitude(op: ModeOperator, f0, times):
    U = op.propagate_many(f0, times)
    return np.sqrt(np.sum(np.abs(U) ** 2, axis=1) * op.lin.grid.cell_volume)


def verify_pointwise_decay(lin, xis, T_max: float = 200.0, f0=None, n_t: int = 81,
                           adjoint: bool = False, seed: int = 0):
    """Fitted exponential rate of |e^{tB(xi)} f0|_{L^2_v} for each xi.

    The horizon is T_max / min(1, |xi|^2) so the slow heat branch is resolved;
    the fit uses the second half of it.  expected_rate is the spectral abscissa.
    """
    if f0 is None:
        f0 = default_f0(lin, seed)
    fits = []
    for xi in xis:
        op = ModeOperator(np.asarray(xi, float), lin, adjoint=adjoint)
        r = float(np.linalg.norm(op.xi))
        T = T_max / min(1.0, r * r) if r > 0 else T_max
        t = np.linspace(0.0, T, n_t)
        amp = mode_amplitude(op, f0, t)
        win = (T / 2, T)
        rate, C, res = fit_exponential(t, amp, win)
        fits.append(DecayFit(f"xi={r:.6g}", r, "exponential", rate, -op.abscissa(), C, res,
                             win, list(t), list(amp)))
    return fits


def heat_branch_spread(fits):
    """Spread (max-min)/mean of rate / |xi|^2 across fits."""
    q = np.array([f.fitted_rate / f.x ** 2 for f in fits])
    return float((q.max() - q.min()) / q.mean()), q


def heat_coefficient(lin, box: Box) -> float:
    """Slowest low-frequency rate over |xi|^2, from the abscissa at the smallest box shell."""
    op = ModeOperator(np.array([box.dxi, 0.0, 0.0]), lin)
    return -op.abscissa() / box.dxi ** 2


def heat_window(kappa: float, box: Box, xi_top: float | None = None, cut: float = 3.0,
                shells: float = 3.0):
    """Times over which a flat-in-|xi| heat integral behaves as on the whole space.

    The weight exp(-2 kappa |xi|^2 t) must have suppressed the top of the spectrum
    (xi_top, default the Nyquist radius) by e^-cut, and its width 1/sqrt(2 kappa t)
    must still span ``shells`` box shells.
    """
    xi_top = box.xi_nyquist if xi_top is None else xi_top
    lo = cut / (2 * kappa * xi_top ** 2)
    hi = 1.0 / (2 * kappa * (shells * box.dxi) ** 2)
    if not hi > lo:
        raise ValueError(f"box too small for a heat window: [{lo:.3g}, {hi:.3g}]")
    return lo, hi


def rate_spread(fits):
    q = np.array([f.fitted_rate for f in fits])
    return float((q.max() - q.min()) / q.mean()), q


def micro_amplitude_slope(lin, xis, t_fixed: float = 5.0, seed: int = 0):
    """log-log slope of |e^{tB(xi)}{I-P}f0| against |xi| at fixed t."""
    f0 = default_f0(lin, seed, micro=True)
    r, a = [], []
    for xi in xis:
        op = ModeOperator(np.asarray(xi, float), lin)
        r.append(np.linalg.norm(op.xi))
        a.append(mode_amplitude(op, f0, [t_fixed])[0])
    slope = np.polyfit(np.log(r), np.log(a), 1)[0]
    return float(slope), np.array(r), np.array(a)


# ---------------------------------------------------------------- Besov decay

def signed_permutations(d: int):
    """Signed permutation matrices of the first d axes, embedded in 3-D."""
    out = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((1, -1), repeat=d):
            G = np.eye(3, dtype=int)
            G[:d, :d] = 0
            for i, (p, s) in enumerate(zip(perm, signs)):
                G[i, p] = s
            out.append(G)
    return out


def node_permutation(grid, G):
    """perm with nodes[perm[i]] = G^{-1} nodes[i] (so f_g = f[perm] is f(G^{-1} v))."""
    n = grid.n_v
    m = np.stack(np.unravel_index(np.arange(grid.size), (n, n, n)), axis=1)
    odd = 2 * m + 1 - n                         # symmetric odd coordinates
    src = odd @ G                               # G^{-1} = G^T for signed permutations
    ms = (src + n - 1) // 2
    return np.ravel_multi_index(ms.T, (n, n, n))


def mode_orbits(box: Box, keep):
    """Group the selected integer wavevectors by orbit under axis signed permutations.

    Returns list of (representative k, [(flat index, G), ...]).
    """
    K = box.k_int.reshape(-1, box.d)
    groups: dict = {}
    sel = np.nonzero(keep.ravel())[0]
    for idx in sel:
        k = K[idx]
        rep = tuple(sorted(np.abs(k)))
        groups.setdefault(rep, []).append(idx)
    Gs = signed_permutations(box.d)
    out = []
    for rep, members in sorted(groups.items()):
        rep_v = np.zeros(3, int)
        rep_v[:box.d] = rep
        pairs = []
        for idx in members:
            k = np.zeros(3, int)
            k[:box.d] = K[idx]
            for G in Gs:
                if np.array_equal(G @ rep_v, k):
                    pairs.append((idx, G))
                    break
        out.append((np.array(rep, float), pairs))
    return out


def shell_profiles(lin):
    """Velocity profiles psi(xi_hat, v) used for shell-synthesized data.

    Both are covariant, psi(G xi_hat, v) = psi(xi_hat, G^T v), so one
    propagation per orbit representative suffices.  "generic" is isotropic
    with a nonzero macro part; "micro" is a heat-flux profile with P psi = 0.
    Isotropic micro data would couple to the fluid modes only at second order
    in |xi| by symmetry.
    """
    V = lin.grid.nodes
    r2 = np.sum(V * V, axis=1)
    sq = np.sqrt(np.exp(-r2 / 2) * (2 * np.pi) ** -1.5)
    generic = (1.0 + 0.5 * r2) * sq

    def micro(xh):
        return project_P((V @ xh) * (r2 - 5.0) * sq, lin.grid)[1]

    return {"generic": lambda xh: generic, "micro": micro}


@dataclass
class BesovSeries:
    """Per-velocity block energies of the evolved shell-profile field."""
    times: np.ndarray
    js: np.ndarray
    energies: dict              # name -> (n_t, n_blocks, N) array
    dv: float
    part: str
    j0: int
    radii: np.ndarray | None = None     # |xi| per orbit
    shells: dict | None = None          # name -> (n_t, n_orbits) mode energy summed over v

    def sobolev(self, name, s):
        """|f(t)|_{L^2_v(H^s)} (homogeneous) series."""
        return np.sqrt(self.shells[name] @ self.radii ** (2 * s))

    def norm(self, name, s):
        """|f(t)|_{L^2_v(B^s_{2,inf})} series for profile ``name``."""
        E = self.energies[name]
        w = 2.0 ** (s * self.js)[None, :, None]
        per_v = np.max(w * np.sqrt(E), axis=1)
        return np.sqrt(np.sum(per_v ** 2, axis=1) * self.dv)

    def l2(self, name):
        return np.sqrt(np.sum(self.energies[name], axis=(1, 2)) * self.dv)


def besov_decay_series(lin, box: Box, s0: float, j0: int, times, part: str = "low",
                       profiles=None, xi_cut: float | None = None, adjoint: bool = False,
                       progress=None, variants: dict | None = None) -> BesovSeries:
    """Evolve a(xi) psi(v), |a(xi)|^2 = |xi|^(-2 s0 - d), and record block energies.

    ``part`` selects S_j0 ("low") or (1 - S_j0) ("high") of the evolved field;
    only modes where that multiplier is nonzero are propagated.  ``profiles``
    maps names to covariant callables xi_hat -> psi (see shell_profiles).
    ``variants`` maps output names to (profile name, s0) so several data
    regularities share one propagation; by default every profile uses ``s0``.
    """
    if profiles is None:
        profiles = shell_profiles(lin)
    times = np.asarray(times, float)
    r = box.xi_abs
    w_low = chi(r * 2.0 ** -j0)
    mult = w_low if part == "low" else 1.0 - w_low
    # drop the unpaired Nyquist plane and the zero mode
    keep = (mult > 0) & (r > 0) & np.all(np.abs(box.k_int) < box.n // 2, axis=-1)
    if xi_cut is not None:
        keep &= r <= xi_cut
    filt = dyadic_filter(box)
    W2 = filt.weights_sq                      # (n_blocks, n_modes)
    N = lin.grid.size
    if variants is None:
        variants = {k: (k, s0) for k in profiles}
    energies = {k: np.zeros((len(times), len(filt.js), N)) for k in variants}
    mult_f = mult.ravel()
    parity = ParityForm(lin)
    perms: dict = {}
    orbits = mode_orbits(box, keep)
    radii = np.array([np.linalg.norm(rep) * box.dxi for rep, _ in orbits])
    shells = {k: np.zeros((len(times), len(orbits))) for k in variants}
    for io_, (rep, pairs) in enumerate(orbits):
        op = ModeOperator(rep * box.dxi, lin, adjoint=adjoint, _parity=parity)
        rad = float(np.linalg.norm(rep * box.dxi))
        amp2 = {k: rad ** (-2 * v[1] - box.d) for k, v in variants.items()}
        xh = op.xi / np.linalg.norm(op.xi)
        used = {v[0] for v in variants.values()}
        U = {k: np.abs(op.propagate_many(p(xh), times)) ** 2
             for k, p in profiles.items() if k in used}
        usum = {k: U[k].sum(axis=1) * lin.grid.cell_volume for k in U}
        for idx, G in pairs:
            key = G.tobytes()
            if key not in perms:
                perms[key] = node_permutation(lin.grid, G)
            perm = perms[key]
            base = mult_f[idx] ** 2 * box.volume
            wj = W2[:, idx] * base
            nzj = np.nonzero(wj)[0]
            Ug = {k: U[k][:, perm] for k in U}
            for k, (pk, _) in variants.items():
                shells[k][:, io_] += base * amp2[k] * usum[pk]
                for jb in nzj:
                    energies[k][:, jb, :] += (wj[jb] * amp2[k]) * Ug[pk]
        if progress:
            progress(io_ + 1, len(orbits))
    return BesovSeries(times, filt.js.copy(), energies, lin.grid.cell_volume, part, j0,
                       radii, shells)


def verify_besov_decay(series: BesovSeries, s: float, s0: float, name: str = "generic",
                       window=None) -> DecayFit:
    t = series.times
    amp = series.norm(name, s)
    if window is None:
        window = (t[-1] / 4, t[-1])
    if series.part == "low":
        sigma, C, res = fit_algebraic(t, amp, window)
        expected = (s - s0) / 2 + (0.5 if name == "micro" else 0.0)
        return DecayFit(f"besov_low[{name}] s={s:g} s0={s0:g}", s, "algebraic", sigma,
                        expected, C, res, tuple(window), list(t), list(amp))
    rate, C, res = fit_exponential(t, amp, window)
    return DecayFit(f"besov_high[{name}] s={s:g}", s, "exponential", rate, float("nan"),
                    C, res, tuple(window), list(t), list(amp))


def null_space_conservation(lin, t: float = 3.0):
    """Max change of the five moments of e^{tB(0)} f0 for random f0."""
    op = ModeOperator(np.zeros(3), lin)
    f0 = default_f0(lin, 3)
    ft = propagate_mode(op, f0, t, "expm")
    E = lin.basis.vectors
    dv = lin.grid.cell_volume
    return float(np.max(np.abs(E @ ft * dv - E @ f0 * dv)))
