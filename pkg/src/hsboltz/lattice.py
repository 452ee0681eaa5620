"""Conservative lattice collision set for the hard-sphere kernel.

A collision (k, l) -> (k', l') is kept when the relative velocity u = v_k - v_l
is rotated to another lattice vector u' of the same length and parity
(so that v' = (v + v*)/2 + u'/2 lands on a node) and both outgoing nodes lie
inside the box.  Each sphere of lattice vectors acts as an equal-weight
angular rule, so in the box interior

    sum_{u'} A(u) = (|u|/2) * 4*pi * h^3,

which is the hard-sphere angular integral.  Because the rule is the same for
(k, l) and (k', l'), conservation, detailed balance and the symmetry of the
linearized operator hold exactly in floating point (up to rounding).

An unordered event {k, l} <-> {k', l'} is stored once; it contributes
+2A (F_k' F_l' - F_k F_l) to rows k, l and the negative to rows k', l'.
"""
from __future__ import annotations

import itertools
import math

import numba as nb
import numpy as np


def _key(u):
    u = np.asarray(u)
    return (np.sum(u * u, axis=-1) * 8 + (u[..., 0] % 2) * 4
            + (u[..., 1] % 2) * 2 + (u[..., 2] % 2))


def sphere_table(n: int):
    """Lattice vectors with components in [-(n-1), n-1], grouped by key."""
    m = n - 1
    r = np.arange(-m, m + 1)
    U = np.array(list(itertools.product(r, r, r)), dtype=np.int64)
    key = _key(U)
    order = np.argsort(key, kind="stable")
    U, key = U[order], key[order]
    uniq, start, counts = np.unique(key, return_index=True, return_counts=True)
    K = int(uniq.max()) + 1
    start_of = np.zeros(K, np.int64)
    cnt_of = np.zeros(K, np.int64)
    start_of[uniq] = start
    cnt_of[uniq] = counts
    return U, start_of, cnt_of


def full_sphere_counts(n: int) -> np.ndarray:
    """Number of integer vectors per key on the unbounded lattice."""
    m = n - 1
    rmax = int(math.isqrt(3 * m * m)) + 1
    r = np.arange(-rmax, rmax + 1)
    U = np.array(list(itertools.product(r, r, r)), dtype=np.int64)
    U = U[np.sum(U * U, axis=1) <= 3 * m * m]
    key = _key(U)
    return np.bincount(key, minlength=3 * m * m * 8 + 8).astype(np.int64)


def key_weights(n: int, h: float) -> np.ndarray:
    """A(key) = h^3 * (|u|/2) * 4*pi / N(key) for every key value."""
    counts = full_sphere_counts(n)
    keys = np.arange(len(counts))
    usq = keys // 8
    A = np.zeros(len(counts))
    ok = counts > 0
    A[ok] = h ** 3 * (h * np.sqrt(usq[ok]) / 2.0) * 4.0 * np.pi / counts[ok]
    return A


# ---------------------------------------------------------------- scans

@nb.njit(cache=True)
def _scan_events(n, U, start_of, cnt_of, fill, ek, el, ekp, elp, ekey):
    N = n * n * n
    cnt = 0
    for i in range(N):
        i0 = i // (n * n)
        i1 = (i // n) % n
        i2 = i % n
        for j in range(i + 1, N):
            j0 = j // (n * n)
            j1 = (j // n) % n
            j2 = j % n
            u0 = i0 - j0
            u1 = i1 - j1
            u2 = i2 - j2
            key = (u0 * u0 + u1 * u1 + u2 * u2) * 8 + (u0 % 2) * 4 + (u1 % 2) * 2 + (u2 % 2)
            s = start_of[key]
            for q in range(s, s + cnt_of[key]):
                a0 = (u0 + U[q, 0]) // 2
                a1 = (u1 + U[q, 1]) // 2
                a2 = (u2 + U[q, 2]) // 2
                k0 = j0 + a0
                k1 = j1 + a1
                k2 = j2 + a2
                l0 = i0 - a0
                l1 = i1 - a1
                l2 = i2 - a2
                if (k0 < 0 or k0 >= n or k1 < 0 or k1 >= n or k2 < 0 or k2 >= n
                        or l0 < 0 or l0 >= n or l1 < 0 or l1 >= n or l2 < 0 or l2 >= n):
                    continue
                kp = (k0 * n + k1) * n + k2
                lp = (l0 * n + l1) * n + l2
                if kp >= lp:
                    continue
                if kp < i or (kp == i and lp <= j):
                    continue
                if fill:
                    ek[cnt] = i
                    el[cnt] = j
                    ekp[cnt] = kp
                    elp[cnt] = lp
                    ekey[cnt] = key
                cnt += 1
    return cnt


@nb.njit(cache=True)
def _scan_pairs(n, U, start_of, cnt_of, A, M, sqM, nu, K1):
    """nu and K1 including trivial (u' = +-u) collisions, ordered pairs."""
    N = n * n * n
    for i in range(N):
        i0 = i // (n * n)
        i1 = (i // n) % n
        i2 = i % n
        for j in range(N):
            if j == i:
                continue
            j0 = j // (n * n)
            j1 = (j // n) % n
            j2 = j % n
            u0 = i0 - j0
            u1 = i1 - j1
            u2 = i2 - j2
            key = (u0 * u0 + u1 * u1 + u2 * u2) * 8 + (u0 % 2) * 4 + (u1 % 2) * 2 + (u2 % 2)
            s = start_of[key]
            nvalid = 0
            for q in range(s, s + cnt_of[key]):
                a0 = (u0 + U[q, 0]) // 2
                a1 = (u1 + U[q, 1]) // 2
                a2 = (u2 + U[q, 2]) // 2
                k0 = j0 + a0
                k1 = j1 + a1
                k2 = j2 + a2
                l0 = i0 - a0
                l1 = i1 - a1
                l2 = i2 - a2
                if (0 <= k0 < n and 0 <= k1 < n and 0 <= k2 < n
                        and 0 <= l0 < n and 0 <= l1 < n and 0 <= l2 < n):
                    nvalid += 1
            w = A[key] * nvalid
            nu[i] += w * M[j]
            K1[i, j] = w * sqM[i] * sqM[j]


@nb.njit(cache=True)
def _scan_assemble_L(n, U, start_of, cnt_of, A, M, isq, L):
    """Accumulate L directly while scanning events (no event storage)."""
    N = n * n * n
    idx = np.empty(4, np.int64)
    sg = np.array([1.0, 1.0, -1.0, -1.0])
    for i in range(N):
        i0 = i // (n * n)
        i1 = (i // n) % n
        i2 = i % n
        for j in range(i + 1, N):
            j0 = j // (n * n)
            j1 = (j // n) % n
            j2 = j % n
            u0 = i0 - j0
            u1 = i1 - j1
            u2 = i2 - j2
            key = (u0 * u0 + u1 * u1 + u2 * u2) * 8 + (u0 % 2) * 4 + (u1 % 2) * 2 + (u2 % 2)
            s = start_of[key]
            for q in range(s, s + cnt_of[key]):
                a0 = (u0 + U[q, 0]) // 2
                a1 = (u1 + U[q, 1]) // 2
                a2 = (u2 + U[q, 2]) // 2
                k0 = j0 + a0
                k1 = j1 + a1
                k2 = j2 + a2
                l0 = i0 - a0
                l1 = i1 - a1
                l2 = i2 - a2
                if (k0 < 0 or k0 >= n or k1 < 0 or k1 >= n or k2 < 0 or k2 >= n
                        or l0 < 0 or l0 >= n or l1 < 0 or l1 >= n or l2 < 0 or l2 >= n):
                    continue
                kp = (k0 * n + k1) * n + k2
                lp = (l0 * n + l1) * n + l2
                if kp >= lp:
                    continue
                if kp < i or (kp == i and lp <= j):
                    continue
                c = 2.0 * A[key] * M[i] * M[j]
                idx[0] = i
                idx[1] = j
                idx[2] = kp
                idx[3] = lp
                for a in range(4):
                    ca = c * sg[a] * isq[idx[a]]
                    for b in range(4):
                        L[idx[a], idx[b]] += ca * sg[b] * isq[idx[b]]


@nb.njit(cache=True)
def _scan_q(n, U, start_of, cnt_of, A, F, G, bil, out):
    """out += Q(F, F) (bil=False) or Q(F, G) (bil=True, without the swap term) while
    enumerating events on the fly; F, G, out are (N, P)."""
    N = n * n * n
    P = F.shape[1]
    for i in range(N):
        i0 = i // (n * n)
        i1 = (i // n) % n
        i2 = i % n
        for j in range(i + 1, N):
            j0 = j // (n * n)
            j1 = (j // n) % n
            j2 = j % n
            u0 = i0 - j0
            u1 = i1 - j1
            u2 = i2 - j2
            key = (u0 * u0 + u1 * u1 + u2 * u2) * 8 + (u0 % 2) * 4 + (u1 % 2) * 2 + (u2 % 2)
            s = start_of[key]
            for q in range(s, s + cnt_of[key]):
                a0 = (u0 + U[q, 0]) // 2
                a1 = (u1 + U[q, 1]) // 2
                a2 = (u2 + U[q, 2]) // 2
                k0 = j0 + a0
                k1 = j1 + a1
                k2 = j2 + a2
                l0 = i0 - a0
                l1 = i1 - a1
                l2 = i2 - a2
                if (k0 < 0 or k0 >= n or k1 < 0 or k1 >= n or k2 < 0 or k2 >= n
                        or l0 < 0 or l0 >= n or l1 < 0 or l1 >= n or l2 < 0 or l2 >= n):
                    continue
                kp = (k0 * n + k1) * n + k2
                lp = (l0 * n + l1) * n + l2
                if kp >= lp:
                    continue
                if kp < i or (kp == i and lp <= j):
                    continue
                a = A[key]
                if not bil:
                    c = 2.0 * a
                    for p in range(P):
                        d = c * (F[kp, p] * F[lp, p] - F[i, p] * F[j, p])
                        out[i, p] += d
                        out[j, p] += d
                        out[kp, p] -= d
                        out[lp, p] -= d
                else:
                    for p in range(P):
                        s_in = F[i, p] * G[j, p] + F[j, p] * G[i, p]
                        s_out = F[kp, p] * G[lp, p] + F[lp, p] * G[kp, p]
                        out[i, p] += a * (s_out - 2.0 * F[i, p] * G[j, p])
                        out[j, p] += a * (s_out - 2.0 * F[j, p] * G[i, p])
                        out[kp, p] += a * (s_in - 2.0 * F[kp, p] * G[lp, p])
                        out[lp, p] += a * (s_in - 2.0 * F[lp, p] * G[kp, p])


@nb.njit(cache=True)
def _events_assemble_L(ek, el, ekp, elp, ekey, A, M, isq, L):
    sg = np.array([1.0, 1.0, -1.0, -1.0])
    idx = np.empty(4, np.int64)
    for e in range(ek.shape[0]):
        idx[0] = ek[e]
        idx[1] = el[e]
        idx[2] = ekp[e]
        idx[3] = elp[e]
        c = 2.0 * A[ekey[e]] * M[idx[0]] * M[idx[1]]
        for a in range(4):
            ca = c * sg[a] * isq[idx[a]]
            for b in range(4):
                L[idx[a], idx[b]] += ca * sg[b] * isq[idx[b]]


# ---------------------------------------------------------------- kernels over x
# Point-blocked layout (n_blocks, N, B): one block keeps every touched row in cache.

BLOCK = 64


@nb.njit(cache=True, nogil=True)
def q_sym_kernel(Fb, ek, el, ekp, elp, ekey, A, outb):
    """outb += Q(F, F) blockwise."""
    for b in range(Fb.shape[0]):
        F = Fb[b]
        out = outb[b]
        B = F.shape[1]
        for e in range(ek.shape[0]):
            k = ek[e]
            l = el[e]
            kp = ekp[e]
            lp = elp[e]
            c = 2.0 * A[ekey[e]]
            for p in range(B):
                d = c * (F[kp, p] * F[lp, p] - F[k, p] * F[l, p])
                out[k, p] += d
                out[l, p] += d
                out[kp, p] -= d
                out[lp, p] -= d


@nb.njit(cache=True, nogil=True)
def q_bil_kernel(Fb, Gb, ek, el, ekp, elp, ekey, A, outb):
    """outb += Q(F, G) blockwise (not symmetrized)."""
    for b in range(Fb.shape[0]):
        F = Fb[b]
        G = Gb[b]
        out = outb[b]
        B = F.shape[1]
        for e in range(ek.shape[0]):
            k = ek[e]
            l = el[e]
            kp = ekp[e]
            lp = elp[e]
            a = A[ekey[e]]
            for p in range(B):
                s_in = F[k, p] * G[l, p] + F[l, p] * G[k, p]
                s_out = F[kp, p] * G[lp, p] + F[lp, p] * G[kp, p]
                out[k, p] += a * (s_out - 2.0 * F[k, p] * G[l, p])
                out[l, p] += a * (s_out - 2.0 * F[l, p] * G[k, p])
                out[kp, p] += a * (s_in - 2.0 * F[kp, p] * G[lp, p])
                out[lp, p] += a * (s_in - 2.0 * F[lp, p] * G[kp, p])


@nb.njit(cache=True, nogil=True)
def l_apply_kernel(gb, ek, el, ekp, elp, ekey, A, M, isq, outb):
    """outb += L g blockwise, matrix-free."""
    for b in range(gb.shape[0]):
        g = gb[b]
        out = outb[b]
        B = g.shape[1]
        for e in range(ek.shape[0]):
            k = ek[e]
            l = el[e]
            kp = ekp[e]
            lp = elp[e]
            c = 2.0 * A[ekey[e]] * M[k] * M[l]
            for p in range(B):
                dG = (g[k, p] * isq[k] + g[l, p] * isq[l]
                      - g[kp, p] * isq[kp] - g[lp, p] * isq[lp]) * c
                out[k, p] += dG * isq[k]
                out[l, p] += dG * isq[l]
                out[kp, p] -= dG * isq[kp]
                out[lp, p] -= dG * isq[lp]


def to_blocks(X, B=BLOCK):
    """(N, P) -> (ceil(P/B), N, B), zero padded."""
    N, P = X.shape
    nb_ = -(-P // B)
    Y = np.zeros((nb_, N, B), dtype=X.dtype)
    for b in range(nb_):
        chunk = X[:, b * B:(b + 1) * B]
        Y[b, :, :chunk.shape[1]] = chunk
    return Y


def from_blocks(Y, P):
    nb_, N, B = Y.shape
    return np.ascontiguousarray(Y.transpose(1, 0, 2).reshape(N, nb_ * B)[:, :P])


# ---------------------------------------------------------------- python API

class CollisionSet:
    """Canonical event list plus per-key weights for an n^3 lattice with spacing h."""

    def __init__(self, n: int, h: float, store_events: bool = True):
        self.n = int(n)
        self.h = float(h)
        self.U, self.start_of, self.cnt_of = sphere_table(self.n)
        A = key_weights(self.n, self.h)
        if len(A) < len(self.start_of):
            A = np.concatenate([A, np.zeros(len(self.start_of) - len(A))])
        self.A = A
        self.n_events = None
        self.events = None
        if store_events:
            self._build_events()

    def _build_events(self):
        z = np.zeros(0, np.int32)
        cnt = _scan_events(self.n, self.U, self.start_of, self.cnt_of, False, z, z, z, z, z)
        arrs = [np.empty(cnt, np.int32) for _ in range(5)]
        _scan_events(self.n, self.U, self.start_of, self.cnt_of, True, *arrs)
        self.n_events = int(cnt)
        self.events = tuple(arrs)

    def nu_and_K1(self, M):
        N = self.n ** 3
        nu = np.zeros(N)
        K1 = np.zeros((N, N))
        _scan_pairs(self.n, self.U, self.start_of, self.cnt_of, self.A, M, np.sqrt(M), nu, K1)
        return nu, K1

    def assemble_L(self, M):
        N = self.n ** 3
        L = np.zeros((N, N))
        isq = 1.0 / np.sqrt(M)
        if self.events is not None:
            _events_assemble_L(*self.events, self.A, M, isq, L)
        else:
            _scan_assemble_L(self.n, self.U, self.start_of, self.cnt_of, self.A, M, isq, L)
        return L

    def count_events(self) -> int:
        if self.n_events is None:
            z = np.zeros(0, np.int32)
            self.n_events = int(_scan_events(self.n, self.U, self.start_of, self.cnt_of,
                                             False, z, z, z, z, z))
        return self.n_events
