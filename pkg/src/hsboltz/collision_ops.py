"""Collision operator Q, nonlinear Gamma, linearized L = nu - K, projection P, kappa_0."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .lattice import (CollisionSet, _scan_q, from_blocks, l_apply_kernel, q_bil_kernel,
                      q_sym_kernel, to_blocks)
from .velocity_space import (NullBasis, VelocityGrid, build_null_basis, maxwellian,
                             read_array_file, write_array_file)

DEFAULT_EVENT_BUDGET = 2.0e7     # stored collision events
DEFAULT_MEMORY_BUDGET = 3.0e9    # bytes for dense velocity matrices


class BudgetError(RuntimeError):
    """Requested discretization exceeds a configured cost guard."""


def estimated_events(n_v: int) -> float:
    # fitted to measured counts (n_v = 6, 8, 12: 4.6e4, 3.6e5, 6.3e6)
    return 4.6e4 * (n_v / 6.0) ** 7.05


@dataclass
class MacroState:
    """Coefficients of P g = {a + b.v + c(|v|^2 - 3)} sqrt(M)."""
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray


class CollisionModel:
    """Shared velocity-space tables and the lattice collision set for one grid."""

    def __init__(self, grid: VelocityGrid, event_budget: float = DEFAULT_EVENT_BUDGET,
                 store_events: bool | None = None):
        self.grid = grid
        self.M = maxwellian(grid.nodes)
        self.sqrtM = np.sqrt(self.M)
        self.isqrtM = 1.0 / self.sqrtM
        self.basis: NullBasis = build_null_basis(grid)
        est = estimated_events(grid.n_v)
        if store_events is None:
            store_events = est <= event_budget
        elif store_events and est > event_budget:
            raise BudgetError(
                f"n_v={grid.n_v} needs ~{est:.2e} collision events > budget {event_budget:.2e}")
        self.cs = CollisionSet(grid.n_v, grid.h, store_events=store_events)
        self._lin = None

    @property
    def N(self) -> int:
        return self.grid.size

    def _require_events(self):
        if self.cs.events is None:
            raise BudgetError("collision events were not stored for this grid (budget guard)")

    # -- bilinear operators on (N,) or (N, P) real arrays
    def q(self, F, G=None, workers: int = 1):
        F = np.asarray(F, dtype=float)
        vec = F.ndim == 1
        F2 = F[:, None] if vec else F
        if self.cs.events is None:
            # streaming fallback: same arithmetic per event, no event storage
            G2 = F2 if G is None else np.asarray(G, dtype=float).reshape(F2.shape)
            res = np.zeros_like(F2)
            _scan_q(self.cs.n, self.cs.U, self.cs.start_of, self.cs.cnt_of, self.cs.A,
                    np.ascontiguousarray(F2), np.ascontiguousarray(G2), G is not None, res)
            if G is not None:
                S = self.swap_matrix()
                res += G2 * (S @ F2) - F2 * (S @ G2)
            return res[:, 0] if vec else res
        Fb = to_blocks(F2)
        out = np.zeros_like(Fb)
        if G is None:
            _run_blocks(lambda a, b: q_sym_kernel(Fb[a:b], *self.cs.events, self.cs.A, out[a:b]),
                        Fb.shape[0], workers)
        else:
            G = np.asarray(G, dtype=float)
            G2 = G[:, None] if vec else G
            Gb = to_blocks(G2)
            _run_blocks(lambda a, b: q_bil_kernel(Fb[a:b], Gb[a:b], *self.cs.events,
                                                  self.cs.A, out[a:b]),
                        Fb.shape[0], workers)
        res = from_blocks(out, F2.shape[1])
        if G is not None:
            # swap direction u' = -u: cancels in Q(F, F) but not for F != G
            S = self.swap_matrix()
            res += G2 * (S @ F2) - F2 * (S @ G2)
        return res[:, 0] if vec else res

    def swap_matrix(self):
        """A(k - l) for every ordered pair: weight of the swap collision."""
        if getattr(self, "_swap", None) is None:
            n = self.grid.n_v
            idx = np.stack(np.unravel_index(np.arange(self.N), (n, n, n)), axis=1)
            U = idx[:, None, :] - idx[None, :, :]
            key = (np.sum(U * U, axis=2) * 8 + (U[..., 0] % 2) * 4 + (U[..., 1] % 2) * 2
                   + (U[..., 2] % 2))
            self._swap = self.cs.A[key]
        return self._swap

    def gamma(self, g1, g2=None, workers: int = 1):
        """Gamma(g1, g2) = M^{-1/2} Q(sqrt(M) g1, sqrt(M) g2); g2=None means Gamma(g1, g1)."""
        g1 = np.asarray(g1, dtype=float)
        w = self.sqrtM if g1.ndim == 1 else self.sqrtM[:, None]
        iw = self.isqrtM if g1.ndim == 1 else self.isqrtM[:, None]
        if g2 is None:
            return iw * self.q(w * g1, workers=workers)
        return iw * self.q(w * g1, w * np.asarray(g2, dtype=float), workers=workers)

    def apply_L(self, g, workers: int = 1):
        """Matrix-free L g using the stored events."""
        self._require_events()
        g = np.asarray(g, dtype=float)
        vec = g.ndim == 1
        g2 = g[:, None] if vec else g
        gb = to_blocks(g2)
        out = np.zeros_like(gb)
        _run_blocks(lambda a, b: l_apply_kernel(gb[a:b], *self.cs.events, self.cs.A, self.M,
                                                self.isqrtM, out[a:b]),
                    gb.shape[0], workers)
        res = from_blocks(out, g2.shape[1])
        return res[:, 0] if vec else res

    def linearized(self, memory_budget: float = DEFAULT_MEMORY_BUDGET, cache_dir=None):
        if self._lin is None:
            self._lin = assemble_L(self.grid, model=self, memory_budget=memory_budget,
                                   cache_dir=cache_dir)
        return self._lin


def _run_blocks(fn, n_blocks: int, workers: int):
    """Run fn(a, b) on disjoint block ranges; results never overlap, so order is irrelevant."""
    if workers <= 1 or n_blocks <= 1:
        fn(0, n_blocks)
        return
    edges = np.linspace(0, n_blocks, min(workers, n_blocks) + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        list(ex.map(lambda ab: fn(*ab), zip(edges[:-1], edges[1:])))


# ---------------------------------------------------------------- module-level API

def q_bilinear(F, G, model: CollisionModel):
    return model.q(F, G)


def gamma(g1, g2, model: CollisionModel):
    return model.gamma(g1, g2)


@dataclass
class LinearizedOperator:
    grid: VelocityGrid
    L: np.ndarray
    nu: np.ndarray        # discrete loss rate (diagonal part)
    K1: np.ndarray
    K2: np.ndarray
    P: np.ndarray
    basis: NullBasis
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def K(self):
        return self.K2 - self.K1

    def eigh(self):
        if self._eig is None:
            self._eig = np.linalg.eigh(self.L)
        return self._eig

    def micro_basis(self):
        """Orthonormal (Euclidean) basis of the complement of the null space."""
        Q, _ = np.linalg.qr(self.basis.vectors.T, mode="complete")
        return Q[:, 5:]


def _cache_path(cache_dir, grid):
    cache_dir = cache_dir or os.environ.get("HSBOLTZ_CACHE")
    if not cache_dir:
        return None
    p = Path(cache_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p / f"linop_R{grid.R:g}_n{grid.n_v}_a{grid.n_angular}.bin"


def assemble_L(grid: VelocityGrid, model: CollisionModel | None = None,
               memory_budget: float = DEFAULT_MEMORY_BUDGET, cache_dir=None) -> LinearizedOperator:
    N = grid.size
    need = 4 * 8.0 * N * N
    if need > memory_budget:
        raise BudgetError(f"dense operator for n_v={grid.n_v} needs {need / 1e9:.1f} GB "
                          f"> budget {memory_budget / 1e9:.1f} GB")
    basis = model.basis if model is not None else build_null_basis(grid)
    M = maxwellian(grid.nodes)
    path = _cache_path(cache_dir, grid)
    if path is not None and path.exists():
        params, arr = read_array_file(path, magic=b"HSBLINOP")
        L, nu, K1 = arr["L"], arr["nu"], arr["K1"]
    else:
        cs = model.cs if model is not None else CollisionSet(grid.n_v, grid.h, store_events=False)
        L = cs.assemble_L(M)
        L = 0.5 * (L + L.T)
        nu, K1 = cs.nu_and_K1(M)
        if path is not None:
            write_array_file(path, {"R": grid.R, "n_v": grid.n_v, "n_angular": grid.n_angular},
                             {"L": L, "nu": nu, "K1": K1}, magic=b"HSBLINOP")
    # L = nu - K2 + K1
    K2 = np.diag(nu) - L + K1
    E = basis.vectors
    P = E.T @ E * grid.cell_volume
    return LinearizedOperator(grid, L, nu, K1, K2, P, basis)


def macro_coefficients(g, model_or_grid):
    """(a, b, c) with P g = {a + b.v + c(|v|^2-3)} sqrt(M), along the last axis."""
    grid = getattr(model_or_grid, "grid", model_or_grid)
    V = grid.nodes
    sq = np.sqrt(maxwellian(V))
    Phi = np.stack([sq, V[:, 0] * sq, V[:, 1] * sq, V[:, 2] * sq,
                    (np.sum(V * V, axis=1) - 3.0) * sq])
    dv = grid.cell_volume
    G = Phi @ Phi.T * dv
    rhs = np.tensordot(np.asarray(g), Phi, axes=([-1], [1])) * dv
    coef = np.linalg.solve(G, np.moveaxis(rhs, -1, 0).reshape(5, -1)).reshape(
        (5,) + rhs.shape[:-1])
    return coef, Phi


def project_P(g, model_or_grid):
    """Return (MacroState, micro part) with g = P g + {I-P} g."""
    g = np.asarray(g)
    coef, Phi = macro_coefficients(g, model_or_grid)
    Pg = np.moveaxis(np.tensordot(Phi.T, coef, axes=([1], [0])), 0, -1)
    return MacroState(coef[0], np.moveaxis(coef[1:4], 0, -1), coef[4]), g - Pg


def macro_part(g, model_or_grid):
    ms, micro = project_P(g, model_or_grid)
    return np.asarray(g) - micro


def estimate_kappa0(lin: LinearizedOperator, method: str = "dense", seed: int = 0,
                    n_starts: int = 8) -> float:
    """min over micro h of <L h, h> / |h|_nu^2."""
    C = lin.micro_basis()
    A = C.T @ (lin.L @ C)
    A = 0.5 * (A + A.T)
    B = C.T @ (lin.nu[:, None] * C)
    if method == "dense":
        k0 = float(sla.eigh(A, B, eigvals_only=True, subset_by_index=[0, 0])[0])
    elif method == "lobpcg":
        from scipy.sparse.linalg import lobpcg
        rng = np.random.Generator(np.random.Philox(seed))
        best = np.inf
        for _ in range(n_starts):
            X = rng.standard_normal((A.shape[0], 1))
            w, _ = lobpcg(A, X, B=B, largest=False, tol=1e-9, maxiter=2000)
            best = min(best, float(w[0]))
        k0 = best
    else:
        raise ValueError(method)
    if not k0 > 0:
        raise RuntimeError(f"kappa_0 = {k0} <= 0: linearized operator is not coercive")
    return k0


def weighted_coercivity_constant(lin: LinearizedOperator) -> float:
    """Smallest C with <nu^2 L h, h> >= 1/2 |nu h|_nu^2 - C |h|_nu^2 for all h."""
    nu = lin.nu
    S = 0.5 * (nu[:, None] ** 2 * lin.L + lin.L * nu[None, :] ** 2)
    A = 0.5 * np.diag(nu ** 3) - S
    return float(sla.eigh(A, np.diag(nu), eigvals_only=True, subset_by_index=[len(nu) - 1] * 2)[0])


def nu_weighted_norm(g, nu, dv, power: float = 1.0):
    """|g|_nu with weight nu^power: sqrt(sum nu^power g^2 dv)."""
    return np.sqrt(np.sum(nu ** power * np.abs(g) ** 2, axis=-1) * dv)
