"""Spatial spectra on a periodic box, Littlewood-Paley blocks and norm evaluators.

Conventions: coefficients are ``fftn(g) / n**d`` over the leading ``d`` axes, so
``int |g|^2 dx = L**d * sum |g_hat|^2``.  Arrays carry any number of trailing
axes; for fields over (x, v) the last axis is the velocity node index.
Homogeneous norms never see the zero mode.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product as iproduct
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .collision_ops import project_P
from .velocity_space import VelocityGrid, build_grid, read_array_file, write_array_file
from .velocity_fd import dv_multi

CHI_IN = 0.75          # chi == 1 on |xi| <= 3/4
CHI_OUT = 4.0 / 3.0    # chi == 0 on |xi| >= 4/3
Q_ALLOWED = (1, 2, math.inf)


class ResolutionWarning(UserWarning):
    """A norm is dominated by a dyadic block the grid only partially resolves."""


# ---------------------------------------------------------------- box

@dataclass(frozen=True)
class Box:
    n: int
    L: float = 2.0 * np.pi * 16
    d: int = 3

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {self.d}")
        if self.n < 2:
            raise ValueError("need at least 2 points per axis")
        if not self.L > 0:
            raise ValueError("box length must be positive")

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def volume(self):
        return self.L ** self.d

    @property
    def dxi(self):
        return 2.0 * np.pi / self.L

    @property
    def xi_nyquist(self):
        return np.pi * self.n / self.L

    @property
    def n_modes(self):
        return self.n ** self.d

    @cached_property
    def k_int(self):
        """Integer wavevectors, shape (n,)*d + (d,)."""
        k = np.rint(np.fft.fftfreq(self.n) * self.n).astype(int)
        return np.stack(np.meshgrid(*([k] * self.d), indexing="ij"), axis=-1)

    @cached_property
    def xi(self):
        return self.k_int * self.dxi

    @cached_property
    def xi_abs(self):
        return np.sqrt(np.sum(self.xi ** 2, axis=-1))

    @cached_property
    def x(self):
        """Physical nodes with x = 0 at index 0, wrapped into [-L/2, L/2)."""
        c = np.fft.fftfreq(self.n) * self.L
        return np.stack(np.meshgrid(*([c] * self.d), indexing="ij"), axis=-1)

    def fft(self, values, workers: int = 1):
        ax = tuple(range(self.d))
        return sfft.fftn(values, axes=ax, workers=workers) / self.n_modes

    def ifft(self, coeffs, workers: int = 1):
        ax = tuple(range(self.d))
        return sfft.ifftn(coeffs, axes=ax, workers=workers) * self.n_modes

    def neg_index(self, coeffs):
        """Array whose entry at xi is coeffs(-xi)."""
        ax = tuple(range(self.d))
        return np.roll(np.flip(coeffs, axis=ax), 1, axis=ax)


@dataclass
class SpatialSpectrum:
    box: Box
    coeffs: np.ndarray

    @classmethod
    def from_physical(cls, box: Box, values, workers: int = 1):
        return cls(box, box.fft(np.asarray(values), workers))

    def physical(self, workers: int = 1):
        return self.box.ifft(self.coeffs, workers)

    def hermitian_defect(self) -> float:
        c = self.coeffs
        return float(np.max(np.abs(self.box.neg_index(c) - np.conj(c)), initial=0.0))

    def l2(self) -> float:
        return float(np.sqrt(self.box.volume * np.sum(np.abs(self.coeffs) ** 2)))


def physical_l2(box: Box, values) -> float:
    """Riemann sum of |g|^2 over the grid (exact for trigonometric polynomials)."""
    return float(np.sqrt(np.sum(np.abs(values) ** 2) * (box.L / box.n) ** box.d))


# ---------------------------------------------------------------- dyadic partition

def _smooth_step(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def chi(r):
    """Radial cutoff: 1 on [0, 3/4], 0 on [4/3, inf), smooth and non-increasing."""
    return 1.0 - _smooth_step((np.asarray(r, dtype=float) - CHI_IN) / (CHI_OUT - CHI_IN))


def phi(r):
    return chi(np.asarray(r) / 2.0) - chi(r)


@dataclass
class DyadicFilter:
    """Dyadic ladder covering every nonzero mode of a box."""
    box: Box
    js: np.ndarray = field(init=False)

    def __post_init__(self):
        r = self.box.xi_abs
        rmin = self.box.dxi
        rmax = float(r.max())
        # block j touches (3/4 2^j, 8/3 2^j)
        lo = math.floor(math.log2(rmin * 3 / 8)) - 1
        hi = math.ceil(math.log2(rmax * 4 / 3)) + 1
        cand = np.arange(lo, hi + 1)
        nz = r[r > 0]
        keep = [j for j in cand if np.any(phi(nz * 2.0 ** -j) > 0)]
        self.js = np.array(keep, dtype=int)

    @property
    def j_min(self):
        return int(self.js[0])

    @property
    def j_max(self):
        return int(self.js[-1])

    def resolved(self, j) -> bool:
        """Whole annulus of block j lies inside the Nyquist ball."""
        return 8.0 / 3.0 * 2.0 ** j <= self.box.xi_nyquist

    def check_j(self, j):
        if j < self.j_min or j > self.j_max:
            raise ValueError(f"block {j} outside resolvable range [{self.j_min}, {self.j_max}]")

    def weight(self, j):
        r = self.box.xi_abs
        w = phi(r * 2.0 ** -j)
        w[r == 0] = 0.0
        return w

    def low_weight(self, j0):
        """Multiplier of S_j0 = chi(2^-j0 xi); the zero mode is kept in the low part."""
        return chi(self.box.xi_abs * 2.0 ** -j0)

    @cached_property
    def weights(self):
        """(n_blocks, n_modes) array of phi(2^-j xi)."""
        W = np.stack([self.weight(j).ravel() for j in self.js])
        W.setflags(write=False)
        return W

    @cached_property
    def weights_sq(self):
        W = self.weights ** 2
        W.setflags(write=False)
        return W


_FILTERS: dict = {}


def dyadic_filter(box: Box) -> DyadicFilter:
    """Shared read-only filter per box."""
    if box not in _FILTERS:
        _FILTERS[box] = DyadicFilter(box)
    return _FILTERS[box]


def _as_coeffs(g):
    if isinstance(g, (SpatialSpectrum, DistributionField)):
        return g.box, g.coeffs
    raise TypeError("expected a SpatialSpectrum or DistributionField")


def lp_block(g, j: int):
    box, c = _as_coeffs(g)
    filt = dyadic_filter(box)
    filt.check_j(j)
    w = filt.weight(j).reshape(box.shape + (1,) * (c.ndim - box.d))
    return _replace(g, c * w)


def low_high_split(g, j0: int):
    """(f_L, f_H) with f_L = S_j0 f and f_H = f - f_L."""
    box, c = _as_coeffs(g)
    filt = dyadic_filter(box)
    if j0 < filt.j_min or j0 > filt.j_max + 1:
        raise ValueError(f"split index {j0} outside [{filt.j_min}, {filt.j_max + 1}]")
    w = filt.low_weight(j0).reshape(box.shape + (1,) * (c.ndim - box.d))
    low = c * w
    return _replace(g, low), _replace(g, c - low)


def _replace(g, coeffs):
    if isinstance(g, DistributionField):
        return DistributionField(g.box, g.grid, coeffs, g.t)
    return SpatialSpectrum(g.box, coeffs)


# ---------------------------------------------------------------- norms

def _power(coeffs, box: Box, keep_last: bool):
    """|c|^2 flattened to (n_modes, rest); trailing non-velocity axes are summed."""
    p = np.abs(coeffs) ** 2
    p = p.reshape((box.n_modes,) + p.shape[box.d:])
    if keep_last:
        if p.ndim < 2:
            raise ValueError("velocity axis requested but the array has no trailing axis")
        return p.reshape(box.n_modes, -1, p.shape[-1]).sum(axis=1)
    return p.reshape(box.n_modes, -1).sum(axis=1, keepdims=True)


def _outer(per_v, dv):
    """L^2_v of a per-velocity-node quantity; dv=None means there is no velocity axis."""
    if dv is None:
        return float(per_v[0])
    return float(np.sqrt(np.sum(np.asarray(dv) * per_v ** 2)))


def block_norms(coeffs, box: Box, dv=None):
    """||Delta_j g||_{L^2_x} for every block, shape (n_blocks, n_v or 1)."""
    filt = dyadic_filter(box)
    P = _power(coeffs, box, dv is not None)
    return np.sqrt(box.volume * (filt.weights_sq @ P))


def _combine(terms, q):
    if q == math.inf:
        return terms.max(axis=0)
    if q == 1:
        return terms.sum(axis=0)
    return np.sqrt(np.sum(terms ** 2, axis=0))


def besov_norm(g, s: float, q=math.inf, dv=None, box: Box | None = None,
               strict: bool = False) -> float:
    """||g||_{L^2_v(B^s_{2,q})}; pass ``dv`` (velocity weights) when the last axis is v."""
    if isinstance(g, (SpatialSpectrum, DistributionField)):
        box, coeffs = g.box, g.coeffs
        if isinstance(g, DistributionField) and dv is None:
            dv = g.grid.cell_volume
    else:
        coeffs = np.asarray(g)
    if q not in Q_ALLOWED:
        raise ValueError(f"q must be one of 1, 2, inf; got {q}")
    if not np.isfinite(s):
        raise ValueError("regularity index must be finite")
    filt = dyadic_filter(box)
    b = block_norms(coeffs, box, dv)
    terms = (2.0 ** (s * filt.js))[:, None] * b
    _check_resolution(terms, filt, s, strict)
    return _outer(_combine(terms, q), dv)


def _check_resolution(terms, filt: DyadicFilter, s, strict):
    tot = terms.sum(axis=1)
    if not np.any(tot > 0):
        return
    jdom = int(filt.js[int(np.argmax(tot))])
    if not filt.resolved(jdom):
        msg = (f"B^{s} norm dominated by block j={jdom} whose annulus extends past the "
               f"Nyquist radius {filt.box.xi_nyquist:.3g}; the grid cannot resolve this regularity")
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, ResolutionWarning, stacklevel=3)


def sobolev_norm(g, s: float, dv=None, box: Box | None = None) -> float:
    """Homogeneous ||g||_{L^2_v(H^s)} (zero mode excluded)."""
    if isinstance(g, (SpatialSpectrum, DistributionField)):
        box, coeffs = g.box, g.coeffs
        if isinstance(g, DistributionField) and dv is None:
            dv = g.grid.cell_volume
    else:
        coeffs = np.asarray(g)
    r = box.xi_abs.ravel()
    w = np.zeros_like(r)
    nz = r > 0
    w[nz] = r[nz] ** (2 * s)
    P = _power(coeffs, box, dv is not None)
    per_v = np.sqrt(box.volume * (w @ P))
    return _outer(per_v, dv)


def l2_norm(coeffs, box: Box, dv=None) -> float:
    P = _power(coeffs, box, dv is not None)
    return _outer(np.sqrt(box.volume * P.sum(axis=0)), dv)


def spectral_derivative(coeffs, box: Box, alpha):
    """(i xi)^alpha applied along the spatial axes."""
    m = np.ones(box.shape, dtype=complex)
    for a, k in enumerate(alpha):
        if k:
            m = m * (1j * box.xi[..., a]) ** k
    return coeffs * m.reshape(box.shape + (1,) * (np.ndim(coeffs) - box.d))


def gradient(coeffs, box: Box):
    """Spatial gradient coefficients, new axis of length d appended after the spatial axes."""
    return np.stack([spectral_derivative(coeffs, box, tuple(int(a == b) for b in range(box.d)))
                     for a in range(box.d)], axis=box.d)


def multi_indices(order: int, dim: int):
    return [a for a in iproduct(range(order + 1), repeat=dim) if sum(a) == order]


# ---------------------------------------------------------------- inequalities

def interpolation_constant_bound(s1, s2, theta=0.5):
    """Upper bound for C in ||g||_{B^{theta s1 + (1-theta) s2}_{2,1}} <= C ||g||^theta ||g||^(1-theta)."""
    gap = abs(s2 - s1)
    return 1.0 / (1.0 - 2.0 ** (-theta * gap)) + 1.0 / (1.0 - 2.0 ** (-(1 - theta) * gap))


def interpolation_ratio(coeffs, box: Box, s1, s2, theta=0.5):
    s = theta * s1 + (1 - theta) * s2
    lhs = besov_norm(coeffs, s, 1, box=box)
    rhs = (besov_norm(coeffs, s1, math.inf, box=box) ** theta
           * besov_norm(coeffs, s2, math.inf, box=box) ** (1 - theta))
    return lhs / rhs


def pad_spectrum(coeffs, box: Box, n_new: int):
    """Embed coefficients into an n_new grid (same L); Nyquist entries are split evenly."""
    if n_new < box.n:
        raise ValueError("padding must not shrink the grid")
    out = np.asarray(coeffs)
    n = box.n
    for ax in range(box.d):
        shp = list(out.shape)
        shp[ax] = n_new
        new = np.zeros(shp, dtype=complex)
        src = np.moveaxis(out, ax, 0)
        dst = np.moveaxis(new, ax, 0)
        h = n // 2
        if n % 2:
            dst[:h + 1] = src[:h + 1]
            dst[n_new - h:] = src[h + 1:]
        else:
            dst[:h] = src[:h]
            dst[n_new - h + 1:] = src[h + 1:]
            dst[h] += 0.5 * src[h]
            dst[n_new - h] += 0.5 * src[h]
        out = new
    return out


def product_spectrum(c1, c2, box: Box):
    """Exact spectrum of the pointwise product on a grid with twice the points."""
    big = Box(2 * box.n, box.L, box.d)
    p1 = big.ifft(pad_spectrum(c1, box, big.n))
    p2 = big.ifft(pad_spectrum(c2, box, big.n))
    return big.fft(p1 * p2), big


def product_ratio(c1, c2, box: Box, s1, s2):
    """||g1 g2||_{B^{s1+s2-d/2}_{2,inf}} / (||g1||_{B^{s1}_{2,1}} ||g2||_{B^{s2}_{2,inf}})."""
    cp, big = product_spectrum(c1, c2, box)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        lhs = besov_norm(cp, s1 + s2 - box.d / 2, math.inf, box=big)
        rhs = besov_norm(c1, s1, 1, box=box) * besov_norm(c2, s2, math.inf, box=box)
    return lhs / rhs


def random_band_field(box: Box, rng, slope=0.0, k_max_frac=0.5, shape=()):
    """Real random field with |c(xi)| ~ |xi|^slope, modes beyond k_max_frac * Nyquist removed."""
    noise = rng.standard_normal(box.shape + tuple(shape))
    c = box.fft(noise)
    r = box.xi_abs
    amp = np.zeros_like(r)
    ok = (r > 0) & (r <= k_max_frac * box.xi_nyquist) & np.all(np.abs(box.k_int) < box.n // 2, axis=-1)
    amp[ok] = r[ok] ** slope
    return c * amp.reshape(box.shape + (1,) * len(shape))


# ---------------------------------------------------------------- distribution fields

@dataclass
class DistributionField:
    """Perturbation f(t, x, v) as spatial Fourier coefficients per velocity node."""
    box: Box
    grid: VelocityGrid
    coeffs: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        want = self.box.shape + (self.grid.size,)
        if self.coeffs.shape != want:
            raise ValueError(f"coefficient array has shape {self.coeffs.shape}, expected {want}")

    @classmethod
    def zeros(cls, box: Box, grid: VelocityGrid, t: float = 0.0):
        return cls(box, grid, np.zeros(box.shape + (grid.size,), dtype=complex), t)

    @classmethod
    def from_physical(cls, box, grid, values, t=0.0, workers: int = 1):
        return cls(box, grid, box.fft(np.asarray(values), workers), t)

    def physical(self, workers: int = 1):
        return self.box.ifft(self.coeffs, workers).real

    def copy(self):
        return DistributionField(self.box, self.grid, self.coeffs.copy(), self.t)

    @property
    def dv(self):
        return self.grid.cell_volume

    def l2(self):
        return l2_norm(self.coeffs, self.box, self.dv)


_SNAP_MAGIC = b"HSBSNAP1"


def save_snapshot(path, f: DistributionField):
    params = {"d": f.box.d, "n_x": f.box.n, "L_box": f.box.L, "n_v": f.grid.n_v,
              "R": f.grid.R, "n_angular": f.grid.n_angular, "time": f.t}
    c = np.ascontiguousarray(f.coeffs, dtype="<c16")
    write_array_file(path, params, {"coeffs": c.view("<f8")}, magic=_SNAP_MAGIC)


def load_snapshot(path) -> DistributionField:
    params, arr = read_array_file(path, magic=_SNAP_MAGIC)
    box = Box(params["n_x"], params["L_box"], params["d"])
    grid = build_grid(params["R"], params["n_v"], params.get("n_angular", 14))
    c = arr["coeffs"].view("<c16").reshape(box.shape + (grid.size,))
    return DistributionField(box, grid, c, params["time"])


# ---------------------------------------------------------------- reports

@dataclass
class NormReport:
    values: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.values.items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"norm entry {k!r} = {v} is not finite and nonnegative")

    def __getitem__(self, k):
        return self.values[k]

    def to_json(self) -> str:
        return json.dumps({"values": {k: float(v) for k, v in self.values.items()},
                           "meta": self.meta}, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["values"], d.get("meta", {}))

    def save(self, path):
        Path(path).write_text(self.to_json())


def _velocity_multi_indices(N):
    return [b for k in range(1, N + 1) for b in multi_indices(k, 3)]


def energy_norm(f: DistributionField, s: float = 0.5, N: int = 3, slow: bool = False,
                order: int = 4) -> NormReport:
    """All groups of the energy norm E^{s,N}; ``slow`` recomputes everything in physical space."""
    if N < 3:
        raise ValueError("energy norm needs N >= 3")
    box, grid = f.box, f.grid
    vw = np.sqrt(1.0 + np.sum(grid.nodes ** 2, axis=1))
    micro = project_P(f.coeffs, grid)[1]
    betas = _velocity_multi_indices(N)
    ev = _slow_parts if slow else _fast_parts
    vals = ev(f.coeffs, vw * f.coeffs, micro, box, grid, s, N, betas, order)
    vals["total"] = sum(vals.values())
    return NormReport(vals, {"s": s, "N": N, "t": f.t, "slow": slow,
                             "n_mixed_terms": sum(
                                 len([a for k in range(N - sum(b) + 1)
                                      for a in multi_indices(k, box.d)]) for b in betas)})


def _fast_parts(c, cw, micro, box, grid, s, N, betas, order):
    dv = grid.cell_volume
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        besov = besov_norm(c, s, math.inf, dv=dv, box=box)
    vals = {
        "besov": besov,
        "hdot_N": sobolev_norm(c, N, dv=dv, box=box),
        "weighted_hdot_1": sobolev_norm(cw, 1, dv=dv, box=box),
        "weighted_hdot_N-1": sobolev_norm(cw, N - 1, dv=dv, box=box),
        "micro_l2": l2_norm(micro, box, dv),
    }
    xi = box.xi.reshape(box.n_modes, box.d)
    mixed = 0.0
    for b in betas:
        hb = dv_multi(micro, grid, b, order)
        P = _power(hb, box, True)                     # (modes, n_v)
        Pv = P.sum(axis=1)
        for k in range(N - sum(b) + 1):
            for a in multi_indices(k, box.d):
                w = np.prod(xi ** (2 * np.array(a)), axis=1)
                mixed += np.sqrt(box.volume * dv * (w @ Pv))
    vals["micro_mixed"] = float(mixed)
    return vals


def _slow_parts(c, cw, micro, box, grid, s, N, betas, order):
    dv = grid.cell_volume
    cell = (box.L / box.n) ** box.d

    def xl2(coeffs):                                    # per velocity node, physical space
        g = box.ifft(coeffs)
        return np.sqrt(np.sum(np.abs(g) ** 2, axis=tuple(range(box.d))) * cell)

    def outer(per_v):
        return float(np.sqrt(np.sum(dv * per_v ** 2)))

    def hdot(coeffs, k):
        acc = 0.0
        for a in multi_indices(k, box.d):
            mult = math.factorial(k) / np.prod([math.factorial(x) for x in a])
            acc = acc + mult * xl2(spectral_derivative(coeffs, box, a)) ** 2
        return outer(np.sqrt(acc))

    filt = DyadicFilter(box)
    best = None
    for j in filt.js:
        w = phi(box.xi_abs * 2.0 ** -j)
        w[box.xi_abs == 0] = 0.0
        t = 2.0 ** (s * j) * xl2(c * w[..., None])
        best = t if best is None else np.maximum(best, t)
    vals = {
        "besov": outer(best),
        "hdot_N": hdot(c, N),
        "weighted_hdot_1": hdot(cw, 1),
        "weighted_hdot_N-1": hdot(cw, N - 1),
        "micro_l2": outer(xl2(micro)),
    }
    mixed = 0.0
    for b in betas:
        hb = dv_multi(micro, grid, b, order)
        for k in range(N - sum(b) + 1):
            for a in multi_indices(k, box.d):
                mixed += outer(xl2(spectral_derivative(hb, box, a)))
    vals["micro_mixed"] = float(mixed)
    return vals
