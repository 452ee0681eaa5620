"""Finite-difference velocity derivatives on the truncated lattice.

Fourth-order central differences in the interior with fourth-order one-sided
closures at the two outermost nodes of each axis (second order when the axis
has fewer than five nodes).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def derivative_matrix(n: int, h: float, order: int = 4) -> np.ndarray:
    D = np.zeros((n, n))
    if order == 4 and n >= 5:
        for i in range(2, n - 2):
            D[i, i - 2:i + 3] = np.array([1, -8, 0, 8, -1]) / 12.0
        left0 = np.array([-25, 48, -36, 16, -3]) / 12.0
        left1 = np.array([-3, -10, 18, -6, 1]) / 12.0
        D[0, :5] = left0
        D[1, :5] = left1
        D[n - 1, n - 5:] = -left0[::-1]
        D[n - 2, n - 5:] = -left1[::-1]
    elif order in (2, 4) and n >= 3:
        for i in range(1, n - 1):
            D[i, i - 1] = -0.5
            D[i, i + 1] = 0.5
        D[0, :3] = [-1.5, 2.0, -0.5]
        D[n - 1, n - 3:] = [0.5, -2.0, 1.5]
    else:
        raise ValueError(f"cannot build an order-{order} stencil on {n} nodes")
    D /= h
    D.setflags(write=False)
    return D


def dv(f, grid, axis: int, order: int = 4):
    """d/dv_axis of f whose last axis runs over the grid nodes (C order, axis 0 slowest)."""
    f = np.asarray(f)
    n = grid.n_v
    D = derivative_matrix(n, float(grid.h), order)
    g = f.reshape(f.shape[:-1] + (n, n, n))
    ax = g.ndim - 3 + axis
    out = np.moveaxis(np.tensordot(D, g, axes=([1], [ax])), 0, ax)
    return out.reshape(f.shape)


def dv_multi(f, grid, beta, order: int = 4):
    """Mixed derivative d^beta_v for a multi-index beta = (b1, b2, b3)."""
    out = f
    for axis, b in enumerate(beta):
        for _ in range(b):
            out = dv(out, grid, axis, order)
    return out


def grad_v(f, grid, order: int = 4):
    """Stack of the three first derivatives, new axis inserted before the velocity axis."""
    return np.stack([dv(f, grid, a, order) for a in range(3)], axis=-2)
