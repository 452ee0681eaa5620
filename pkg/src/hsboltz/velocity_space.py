"""Truncated velocity lattice, Maxwellian tables, collision frequency, null basis."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NORM_M = (2.0 * np.pi) ** -1.5


# ---------------------------------------------------------------- sphere rules

def _octa_orbit(kind: str, *params):
    """Signed-permutation orbit generators used by Lebedev rules."""
    pts = set()
    if kind == "a1":
        base = [(1.0, 0.0, 0.0)]
    elif kind == "a2":
        s = 1.0 / np.sqrt(2.0)
        base = [(0.0, s, s)]
    elif kind == "a3":
        s = 1.0 / np.sqrt(3.0)
        base = [(s, s, s)]
    elif kind == "b":
        l, m = params
        base = [(l, l, m)]
    elif kind == "c":
        p, q = params
        base = [(p, q, 0.0)]
    else:
        raise ValueError(kind)
    import itertools
    for b in base:
        for perm in itertools.permutations(b):
            for signs in itertools.product((1, -1), repeat=3):
                pts.add(tuple(round(s * c, 15) for s, c in zip(signs, perm)))
    return np.array(sorted(pts))


_LEBEDEV = {
    14: [("a1", (), 1 / 15), ("a3", (), 3 / 40)],
    26: [("a1", (), 1 / 21), ("a2", (), 4 / 105), ("a3", (), 9 / 280)],
    38: [("a1", (), 1 / 105), ("a3", (), 9 / 280),
         ("c", (0.4597008433809831, 0.8880738339771153), 1 / 35)],
    50: [("a1", (), 4 / 315), ("a2", (), 64 / 2835), ("a3", (), 27 / 1280),
         ("b", (0.3015113445777636, 0.9045340337332909), 14641 / 725760)],
}


def sphere_rule(n_angular: int):
    """Lebedev nodes/weights on S^2 (weights sum to 4*pi, degree >= 5)."""
    if n_angular not in _LEBEDEV:
        raise ValueError(
            f"n_angular={n_angular} unsupported; choose one of {sorted(_LEBEDEV)} "
            "(rules exact for spherical polynomials of degree >= 5)")
    nodes, weights = [], []
    for kind, params, w in _LEBEDEV[n_angular]:
        p = _octa_orbit(kind, *params)
        nodes.append(p)
        weights.append(np.full(len(p), w))
    nodes = np.concatenate(nodes)
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    return nodes, 4.0 * np.pi * np.concatenate(weights)


# ---------------------------------------------------------------- grid

@dataclass(frozen=True)
class VelocityGrid:
    R: float
    n_v: int
    n_angular: int
    axis: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    sphere_nodes: np.ndarray = field(repr=False)
    sphere_weights: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 2.0 * self.R / self.n_v

    @property
    def size(self) -> int:
        return self.n_v ** 3

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    def node_index(self, i0, i1, i2):
        n = self.n_v
        return (np.asarray(i0) * n + np.asarray(i1)) * n + np.asarray(i2)

    def key(self):
        return (float(self.R), int(self.n_v), int(self.n_angular))

    def inner(self, g, h):
        """Grid L^2_v inner product along the last axis (complex-conjugating g)."""
        return np.sum(np.conj(g) * h, axis=-1) * self.cell_volume

    def norm(self, g):
        return np.sqrt(np.real(self.inner(g, g)))


def build_grid(R: float = 6.0, n_v: int = 16, n_angular: int = 14) -> VelocityGrid:
    if not R > 0:
        raise ValueError("velocity extent R must be positive")
    if int(n_v) != n_v or n_v < 4:
        raise ValueError("n_v must be an integer >= 4")
    if n_v % 2:
        raise ValueError("velocity grid must be even (odd n_v breaks the v -> -v symmetry)")
    n_v = int(n_v)
    h = 2.0 * R / n_v
    axis = -R + (np.arange(n_v) + 0.5) * h
    V = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    w = np.full(len(V), h ** 3)
    sn, sw = sphere_rule(n_angular)
    return VelocityGrid(float(R), n_v, int(n_angular), axis, V, w, sn, sw)


# ---------------------------------------------------------------- Maxwellian / nu

def maxwellian(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return NORM_M * np.exp(-0.5 * np.sum(v * v, axis=-1))


def collision_frequency(v, grid: VelocityGrid, angular: str = "exact") -> np.ndarray:
    """nu(v) = int int |(v - v*).w| M(v*) dw dv*, v* on the grid.

    ``angular="exact"`` uses the closed form 2*pi*|u| of the sphere integral;
    ``angular="quadrature"`` uses the grid's Lebedev rule instead.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    Mw = maxwellian(grid.nodes) * grid.weights
    out = np.empty(len(v))
    for a, va in enumerate(v):
        u = va[None, :] - grid.nodes
        if angular == "exact":
            ang = 2.0 * np.pi * np.linalg.norm(u, axis=1)
        elif angular == "quadrature":
            ang = np.abs(u @ grid.sphere_nodes.T) @ grid.sphere_weights
        else:
            raise ValueError(angular)
        out[a] = ang @ Mw
    return out


@dataclass(frozen=True)
class MaxwellianTable:
    M: np.ndarray
    sqrtM: np.ndarray
    nu: np.ndarray


def maxwellian_table(grid: VelocityGrid) -> MaxwellianTable:
    M = maxwellian(grid.nodes)
    return MaxwellianTable(M, np.sqrt(M), collision_frequency(grid.nodes, grid))


def nu_bracket_constants(grid: VelocityGrid, nu=None):
    """Measured (c1, c2) with c1 <v> <= nu <= c2 <v> on the nodes."""
    if nu is None:
        nu = collision_frequency(grid.nodes, grid)
    jb = np.sqrt(1.0 + np.sum(grid.nodes ** 2, axis=1))
    r = nu / jb
    return float(r.min()), float(r.max())


# ---------------------------------------------------------------- null basis

@dataclass(frozen=True)
class NullBasis:
    vectors: np.ndarray  # (5, N), orthonormal in the grid inner product
    raw: np.ndarray      # (5, N) the unnormalized moments {1, v, |v|^2} sqrt(M)
    coeffs: np.ndarray   # raw = coeffs.T @ vectors  (upper triangular)
    dv: float

    def project(self, g):
        """Coefficients <e_i, g> along the last axis of g."""
        return np.einsum("in,...n->...i", self.vectors, g) * self.dv


def build_null_basis(grid: VelocityGrid, cond_max: float = 1e8) -> NullBasis:
    sq = np.sqrt(maxwellian(grid.nodes))
    V = grid.nodes
    raw = np.stack([sq, V[:, 0] * sq, V[:, 1] * sq, V[:, 2] * sq,
                    np.sum(V * V, axis=1) * sq])
    dv = grid.cell_volume
    gram = raw @ raw.T * dv
    if np.linalg.cond(gram) > cond_max:
        raise ValueError("null-space Gram matrix is ill conditioned; velocity grid too coarse")
    # two passes of modified Gram-Schmidt in the weighted inner product
    E = raw.copy()
    for _ in range(2):
        for i in range(5):
            for j in range(i):
                E[i] -= (E[j] @ E[i]) * dv * E[j]
            E[i] /= np.sqrt(E[i] @ E[i] * dv)
    coeffs = E @ raw.T * dv
    return NullBasis(E, raw, coeffs, dv)


def tail_mass_bound(R: float) -> float:
    """Mass of M outside the cube [-R, R]^3."""
    from scipy.special import erf
    return 1.0 - erf(R / np.sqrt(2.0)) ** 3


# ---------------------------------------------------------------- cache

_MAGIC = b"HSBGRID1"


def save_grid_tables(path, grid: VelocityGrid, extra: dict | None = None):
    """Header (JSON, length-prefixed) followed by little-endian float64 arrays."""
    tab = maxwellian_table(grid)
    arrays = {"nodes": grid.nodes, "weights": grid.weights, "M": tab.M,
              "sqrtM": tab.sqrtM, "nu": tab.nu,
              "sphere_nodes": grid.sphere_nodes, "sphere_weights": grid.sphere_weights}
    if extra:
        arrays.update(extra)
    write_array_file(path, {"R": grid.R, "n_v": grid.n_v, "n_angular": grid.n_angular}, arrays)


def load_grid_tables(path):
    header, arrays = read_array_file(path)
    grid = build_grid(header["R"], header["n_v"], header["n_angular"])
    return grid, arrays


def write_array_file(path, params: dict, arrays: dict, magic: bytes = _MAGIC):
    path = Path(path)
    meta = {"params": params,
            "arrays": [[k, list(np.shape(a))] for k, a in arrays.items()]}
    head = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_array_file(path, magic: bytes = _MAGIC):
    with open(path, "rb") as fh:
        if fh.read(len(magic)) != magic:
            raise ValueError(f"{path}: not a table cache file")
        (n,) = struct.unpack("<Q", fh.read(8))
        meta = json.loads(fh.read(n))
        out = {}
        for name, shape in meta["arrays"]:
            cnt = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(fh.read(8 * cnt), dtype="<f8").reshape(shape).copy()
    return meta["params"], out
