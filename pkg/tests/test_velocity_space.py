import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsboltz import velocity_space as vs
from oracles import cube_gaussian_mass, gaussian_radial_moment, nu_closed_form, nu_radial_oracle


def sphere_monomial(a, b, c):
    if a % 2 or b % 2 or c % 2:
        return 0.0
    g = math.gamma
    return 2 * g((a + 1) / 2) * g((b + 1) / 2) * g((c + 1) / 2) / g((a + b + c + 3) / 2)


def test_build_grid_basic():
    g = vs.build_grid(6.0, 16, 14)
    assert g.size == 4096
    assert g.weights.sum() == pytest.approx(1728.0, rel=1e-12)
    # closed under negation, node by node
    neg = -g.nodes[::-1]
    assert np.allclose(neg, g.nodes, atol=1e-14)


@pytest.mark.parametrize("bad", [dict(R=6.0, n_v=3), dict(R=6.0, n_v=7), dict(R=0.0, n_v=8),
                                 dict(R=-1.0, n_v=8), dict(R=6.0, n_v=8, n_angular=6)])
def test_build_grid_rejects(bad):
    with pytest.raises(ValueError):
        vs.build_grid(**bad)


def test_odd_grid_message():
    with pytest.raises(ValueError, match="velocity grid must be even"):
        vs.build_grid(6.0, 9)


@pytest.mark.parametrize("n_ang,degree", [(14, 5), (26, 7), (38, 9), (50, 11)])
def test_sphere_rules_exact(n_ang, degree):
    x, w = vs.sphere_rule(n_ang)
    assert w.sum() == pytest.approx(4 * np.pi, abs=1e-10)
    assert np.allclose(np.linalg.norm(x, axis=1), 1.0, atol=1e-14)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                val = np.sum(w * x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c)
                assert val == pytest.approx(sphere_monomial(a, b, c), abs=1e-12)


def test_maxwellian_values():
    assert vs.maxwellian(np.zeros(3)) == pytest.approx(0.0634936359342410, rel=1e-12)
    v = np.array([1.0, 1.0, 0.0])
    assert vs.maxwellian(v) == pytest.approx(np.exp(-1) * (2 * np.pi) ** -1.5, rel=1e-14)


def test_maxwellian_mass_and_tail():
    g = vs.build_grid(8.0, 24, 26)
    mass = float(np.sum(vs.maxwellian(g.nodes) * g.weights))
    assert mass >= 0.9999
    assert mass == pytest.approx(cube_gaussian_mass(8.0), abs=1e-9)
    g6 = vs.build_grid(6.0, 16, 14)
    m6 = float(np.sum(vs.maxwellian(g6.nodes) * g6.weights))
    eps_R = vs.tail_mass_bound(6.0)
    assert 1 - eps_R - 1e-9 <= m6 <= 1.0


def test_quadrature_degree_two_moments():
    g = vs.build_grid(6.0, 16, 14)
    M = vs.maxwellian(g.nodes) * g.weights
    V = g.nodes
    ref0 = cube_gaussian_mass(6.0)
    assert np.sum(M) == pytest.approx(ref0, abs=1e-6)
    assert np.sum(M * V[:, 0]) == pytest.approx(0.0, abs=1e-12)
    # |v|^2 moment against the radial oracle (whole space value 3)
    assert np.sum(M * np.sum(V * V, axis=1)) == pytest.approx(gaussian_radial_moment(2), abs=1e-6)
    assert np.sum(M * V[:, 0] ** 2) == pytest.approx(1.0, abs=1e-6)
    assert np.sum(M * V[:, 0] * V[:, 1]) == pytest.approx(0.0, abs=1e-12)


def test_collision_frequency_symmetry_and_growth():
    g = vs.build_grid(6.0, 16, 14)
    nu = vs.collision_frequency(g.nodes, g)
    nu_neg = vs.collision_frequency(-g.nodes, g)
    assert np.allclose(nu, nu_neg, rtol=1e-12)
    c1, c2 = vs.nu_bracket_constants(g, nu)
    assert 0 < c1 <= c2 and c2 / c1 < 10


def test_collision_frequency_ratio_vs_radial_oracle():
    g = vs.build_grid(6.0, 16, 14)
    nu0, nu4 = vs.collision_frequency(np.array([[0, 0, 0], [4.0, 0, 0]]), g)
    ratio_ref = nu_radial_oracle(4.0) / nu_radial_oracle(0.0)
    assert nu4 / nu0 == pytest.approx(ratio_ref, rel=1e-2)
    # radial oracle agrees with the closed form
    assert nu_radial_oracle(2.5) == pytest.approx(nu_closed_form(2.5), rel=1e-8)


def test_collision_frequency_monotone_in_speed():
    g = vs.build_grid(6.0, 16, 14)
    nu = vs.collision_frequency(g.nodes, g)
    r = np.round(np.linalg.norm(g.nodes, axis=1), 9)
    shells = np.unique(r)
    lo = np.array([nu[r == s].min() for s in shells])
    hi = np.array([nu[r == s].max() for s in shells])
    # anisotropy inside a shell is tiny compared with the growth between shells
    assert np.all(np.diff(lo) >= -1e-9)
    assert np.max((hi - lo) / lo) < 1e-4


def test_quadrature_angular_option():
    g = vs.build_grid(6.0, 16, 50)
    v = np.array([[0.0, 0, 0], [1.0, 2.0, 0.5]])
    exact = vs.collision_frequency(v, g)
    quad = vs.collision_frequency(v, g, angular="quadrature")
    assert np.allclose(quad, exact, rtol=2e-2)


def test_null_basis_orthonormal_and_span():
    g = vs.build_grid(6.0, 12, 14)
    nb = vs.build_null_basis(g)
    G = nb.vectors @ nb.vectors.T * g.cell_volume
    assert np.allclose(G, np.eye(5), atol=1e-10)
    sq = np.sqrt(vs.maxwellian(g.nodes))
    c = nb.project(sq)
    assert np.allclose(c @ nb.vectors, sq, atol=1e-10)


def test_null_basis_v1_squared_projection():
    # small grid, compared with an independent least-squares computation
    g = vs.build_grid(4.0, 6, 14)
    nb = vs.build_null_basis(g)
    sq = np.sqrt(vs.maxwellian(g.nodes))
    target = g.nodes[:, 0] ** 2 * sq
    c = nb.project(target)
    assert np.all(np.abs(c[1:4]) < 1e-12)
    assert abs(c[0]) > 1e-3 and abs(c[4]) > 1e-3
    raw = nb.raw.T
    coef, *_ = np.linalg.lstsq(raw, target, rcond=None)
    assert np.allclose(raw @ coef, c @ nb.vectors, atol=1e-10)


def test_null_basis_rejects_degenerate():
    g = vs.build_grid(1e-3, 4, 14)
    with pytest.raises(ValueError):
        vs.build_null_basis(g)


def test_grid_cache_roundtrip(tmp_path):
    g = vs.build_grid(5.0, 8, 26)
    p = tmp_path / "grid.bin"
    vs.save_grid_tables(p, g)
    g2, arr = vs.load_grid_tables(p)
    assert g2.key() == g.key()
    assert np.array_equal(arr["nodes"], g.nodes)
    assert np.allclose(arr["M"], vs.maxwellian(g.nodes), rtol=0, atol=0)
    raw = p.read_bytes()
    assert raw[:8] == b"HSBGRID1"


@settings(max_examples=25, deadline=None)
@given(R=st.floats(1.0, 10.0), half=st.integers(2, 8))
def test_grid_invariants_property(R, half):
    g = vs.build_grid(R, 2 * half, 14)
    assert g.weights.sum() == pytest.approx((2 * R) ** 3, rel=1e-12)
    assert np.allclose(np.sort(g.axis), np.sort(-g.axis))
    assert g.sphere_weights.sum() == pytest.approx(4 * np.pi, abs=1e-10)
    assert np.all(vs.maxwellian(g.nodes) > 0)
