"""External force fields E(t, x) on the periodic box.

Every field is theta(t) * E_base(x) with a 3-component E_base given by its
spatial Fourier coefficients.  Fields over d < 3 spatial dimensions are slices
through the origin (missing coordinates set to 0).
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fourier_lp import Box, NormReport, besov_norm, sobolev_norm, _smooth_step


class SmallnessWarning(UserWarning):
    """Force norm exceeds the configured smallness threshold."""


# ---------------------------------------------------------------- modulation profiles

def _phase(t, T):
    """t mod T in [0, T); math.fmod is exact, so t and t + kT agree whenever t + kT is exact."""
    if not math.isfinite(T):
        return t
    p = math.fmod(t, T)
    return p + T if p < 0 else p


def profile_function(kind: str, T: float, sharpness: float = 4.0) -> Callable[[float], float]:
    if kind == "constant":
        return lambda t: 1.0
    if not (T > 0 and math.isfinite(T)):
        raise ValueError("periodic modulation needs a finite period T > 0")
    if kind == "sin":
        shape = math.sin
    elif kind == "square-smoothed":
        norm = math.tanh(sharpness)

        def shape(a):
            return math.tanh(sharpness * math.sin(a)) / norm
    else:
        raise ValueError(f"unknown modulation profile {kind!r}")

    def theta(t):
        # second half-period evaluated as the exact negative of the first
        p = _phase(t, T)
        if p >= T / 2:
            return -shape(2 * math.pi * (p - T / 2) / T)
        return shape(2 * math.pi * p / T)

    return theta


# ---------------------------------------------------------------- force field

@dataclass(frozen=True)
class ForceField:
    kind: str
    params: dict
    base: Callable[[Box], np.ndarray]          # box -> coefficients, shape box.shape + (3,)
    period: float = math.inf
    profile: str = "constant"
    potential: Callable[[Box], np.ndarray] | None = None
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def theta(self, t: float) -> float:
        return profile_function(self.profile, self.period)(t)

    def coeffs(self, box: Box) -> np.ndarray:
        if box not in self._cache:
            c = self.base(box)
            c.setflags(write=False)
            self._cache[box] = c
        return self._cache[box]

    def at(self, t: float, box: Box) -> np.ndarray:
        return self.theta(t) * self.coeffs(box)

    def physical(self, t: float, box: Box) -> np.ndarray:
        return box.ifft(self.at(t, box)).real

    @property
    def is_zero(self):
        return self.kind == "zero"

    def describe(self) -> dict:
        return {"kind": self.kind, "params": self.params, "period": self.period,
                "profile": self.profile}


def zero_field() -> ForceField:
    return ForceField("zero", {}, lambda box: np.zeros(box.shape + (3,), complex))


def _embed(box: Box):
    """Physical coordinates padded to 3 components."""
    x = np.zeros(box.shape + (3,))
    x[..., :box.d] = box.x
    return x


def radial_window(r, L):
    """1 for r <= 0.4 L, 0 for r >= 0.5 L, smooth in between."""
    return 1.0 - _smooth_step((np.asarray(r) - 0.4 * L) / (0.1 * L))


def radial_window_deriv(r, L):
    t = np.clip((np.asarray(r, float) - 0.4 * L) / (0.1 * L), 0.0, 1.0)
    inside = (t > 0) & (t < 1)
    ts = np.where(inside, t, 0.5)
    a, b = np.exp(-1 / ts), np.exp(-1 / (1 - ts))
    d = a * b * (1 / ts ** 2 + 1 / (1 - ts) ** 2) / (a + b) ** 2
    return np.where(inside, -d / (0.1 * L), 0.0)


def deriv_multipliers(box: Box):
    """i xi per axis, shape box.shape + (3,), with the unpaired Nyquist entries set to 0
    so first derivatives of real fields stay real."""
    xi = np.zeros(box.shape + (3,))
    xi[..., :box.d] = box.xi
    if box.n % 2 == 0:
        nyq = box.k_int == -(box.n // 2)
        xi[..., :box.d][nyq] = 0.0
    return 1j * xi


def _curl_z(box: Box, psi_hat):
    """Coefficients of curl(psi e_3) = (d2 psi, -d1 psi, 0)."""
    D = deriv_multipliers(box)
    out = np.zeros(box.shape + (3,), complex)
    out[..., 0] = D[..., 1] * psi_hat
    out[..., 1] = -D[..., 0] * psi_hat
    return out


def rotational_field(eps: float, m: float = 3.0, scale: float = 1.0, window: bool = True):
    """E = eps (-x2, x1, 0) <x/scale>^(-2m), built as eps curl(Psi e_3) with a radial window.

    Psi = scale^2 <x/scale>^(2-2m) / (2(m-1)) reproduces the closed form exactly
    where the window is 1, and makes the spectral divergence vanish identically.
    """
    if not m > 2:
        raise ValueError(f"decay exponent m must exceed 2, got {m}")
    if not scale > 0:
        raise ValueError("scale must be positive")

    def stream(box: Box):
        x = _embed(box)
        r2 = np.sum(x * x, axis=-1)
        psi = scale ** 2 * (1 + r2 / scale ** 2) ** (1 - m) / (2 * (m - 1))
        if window:
            psi = psi * radial_window(np.sqrt(r2), box.L)
        return box.fft(psi)

    def base(box: Box):
        return eps * _curl_z(box, stream(box))

    return ForceField("rotational", {"eps": eps, "m": m, "scale": scale}, base)


def rotational_closed_form(x, eps, m=3.0, scale=1.0, L=None):
    """Pointwise E; with L given, the windowed field eps curl(w Psi e_3) including window terms."""
    x = np.asarray(x, float)
    r2 = np.sum(x * x, axis=-1)
    g = (1 + r2 / scale ** 2) ** (-m)
    if L is not None:
        r = np.sqrt(r2)
        psi = scale ** 2 * (1 + r2 / scale ** 2) ** (1 - m) / (2 * (m - 1))
        dw = radial_window_deriv(r, L)
        g = radial_window(r, L) * g - psi * np.where(r > 0, dw / np.where(r > 0, r, 1.0), 0.0)
    return eps * np.stack([-x[..., 1] * g, x[..., 0] * g, np.zeros_like(g)], axis=-1)


def gaussian_potential(amp: float, width: float = 1.0):
    """phi(x) = amp exp(-|x|^2 / (2 width^2)) sampled on the box."""
    def phi(box: Box):
        x = _embed(box)
        return amp * np.exp(-np.sum(x * x, axis=-1) / (2 * width ** 2))
    return phi


def cosine_potential(amp: float, k: int = 1):
    """phi(x) = amp cos(2 pi k x1 / L), exactly band-limited."""
    def phi(box: Box):
        return amp * np.cos(2 * np.pi * k * box.x[..., 0] / box.L)
    return phi


def potential_field(phi: Callable[[Box], np.ndarray], params: dict | None = None) -> ForceField:
    """Stationary E = -grad phi computed spectrally from samples of phi."""
    def base(box: Box):
        return -deriv_multipliers(box) * box.fft(phi(box))[..., None]
    return ForceField("potential", dict(params or {}), base, potential=phi)


def periodic_modulate(base: ForceField, T: float, profile: str = "sin") -> ForceField:
    if not T > 0:
        raise ValueError("period must be positive")
    profile_function(profile, T)            # validates
    return ForceField(base.kind, dict(base.params), base.base, T, profile, base.potential)


def custom_spectral(path_or_dict) -> ForceField:
    """Coefficients from JSON: {"L": box length, "modes": [[k..., re1, im1, re2, im2, re3, im3], ...]}.

    Missing conjugate partners are added so the field is real.
    """
    if isinstance(path_or_dict, (str, Path)):
        spec = json.loads(Path(path_or_dict).read_text())
    else:
        spec = path_or_dict
    L0 = float(spec["L"])
    modes = [list(map(float, m)) for m in spec["modes"]]

    def base(box: Box):
        if not math.isclose(box.L, L0, rel_tol=1e-12):
            raise ValueError(f"custom force defined for L={L0}, box has L={box.L}")
        out = np.zeros(box.shape + (3,), complex)
        filled = set()
        for row in modes:
            k = tuple(int(v) for v in row[:box.d])
            vals = np.array(row[box.d:box.d + 6]).reshape(3, 2)
            c = vals[:, 0] + 1j * vals[:, 1]
            if any(abs(ki) >= box.n // 2 for ki in k):
                raise ValueError(f"mode {k} not representable on n={box.n}")
            out[k] += c
            filled.add(k)
        for k in list(filled):
            mk = tuple(-ki for ki in k)
            if mk not in filled:
                out[mk] += np.conj(out[k])
        return out

    return ForceField("custom-spectral", {"L": L0, "n_modes": len(modes)}, base)


# ---------------------------------------------------------------- diagnostics

def spectral_divergence(c, box: Box):
    return np.sum(deriv_multipliers(box) * c, axis=-1)


def spectral_curl(c, box: Box):
    return np.cross(deriv_multipliers(box), c)


def value_at_origin(c, box: Box):
    """Physical value at x = 0 from coefficients: the plain sum over modes."""
    return np.asarray(c).reshape((box.n_modes, -1)).sum(axis=0)


def force_norm_report(E: ForceField, box: Box, N: int = 4, n_samples: int = 64,
                      delta: float | None = None) -> NormReport:
    """sup over sampled times of |E(t)|_{B^{-d/2}_{2,inf}} + |E(t)|_{H^N}."""
    s_low = -box.d / 2
    if math.isfinite(E.period):
        times = np.arange(n_samples) * (E.period / n_samples)
    else:
        times = np.array([0.0])
    c = E.coeffs(box)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b0 = besov_norm(c, s_low, math.inf, box=box)
    h0 = sobolev_norm(c, N, box=box)
    th = np.array([abs(E.theta(float(t))) for t in times])
    bsup, hsup = float(th.max() * b0), float(th.max() * h0)
    total = bsup + hsup
    if delta is not None and total > delta:
        warnings.warn(f"force norm {total:.3e} exceeds smallness threshold {delta:.3e}",
                      SmallnessWarning, stacklevel=2)
    return NormReport({"besov_low": bsup, "hdot_N": hsup, "total": total},
                      {"s_low": s_low, "N": N, "n_samples": int(len(times)), **E.describe()})
