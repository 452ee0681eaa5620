import json
import math

import numpy as np
import pytest

from hsboltz import forcing as fo
from hsboltz import fourier_lp as fl


def embed(box):
    x = np.zeros(box.shape + (3,))
    x[..., :box.d] = box.x
    return x


# ------------------------------------------------------------ rotational field

def test_rotational_rejects_small_m():
    for m in (2.0, 1.0, -1):
        with pytest.raises(ValueError):
            fo.rotational_field(1e-2, m)


def test_rotational_divergence_free_spectrally():
    for box in (fl.Box(32, 2 * np.pi * 16, 3), fl.Box(16, 2 * np.pi * 4, 3), fl.Box(64, 20.0, 2)):
        c = fo.rotational_field(1e-2, 3).coeffs(box)
        div = fo.spectral_divergence(c, box)
        assert np.max(np.abs(div)) <= 1e-14 * np.max(np.abs(c)) * np.max(box.xi_abs)


def test_rotational_curl_at_origin():
    box = fl.Box(96, 4 * np.pi, 3)
    eps = 1e-2
    c = fo.rotational_field(eps, 3).coeffs(box)
    curl0 = fo.value_at_origin(fo.spectral_curl(c, box), box).real
    assert np.allclose(curl0, [0, 0, 2 * eps], atol=1e-6 * eps)
    # closed form, central differences with a tiny step
    h = 1e-5
    J = np.zeros((3, 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        J[:, a] = (fo.rotational_closed_form(e, eps) - fo.rotational_closed_form(-e, eps)) / (2 * h)
    curl = np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])
    assert np.allclose(curl, [0, 0, 2 * eps], atol=1e-9)


def test_scale_keeps_origin_curl():
    box = fl.Box(64, 2 * np.pi * 8, 3)
    c = fo.rotational_field(1e-3, 3, scale=4.0).coeffs(box)
    curl0 = fo.value_at_origin(fo.spectral_curl(c, box), box).real
    assert curl0[2] == pytest.approx(2e-3, rel=1e-4)


@pytest.mark.parametrize("box", [fl.Box(1024, 2 * np.pi * 4, 1), fl.Box(1024, 2 * np.pi * 8, 2)])
def test_closed_form_matches_spectral(box):
    E = fo.rotational_field(1e-2, 3)
    c = E.coeffs(box)
    cs = box.fft(fo.rotational_closed_form(embed(box), 1e-2, 3, 1.0, box.L))
    assert np.max(np.abs(cs - c)) <= 1e-10 * np.max(np.abs(c))


def test_window_effect_small_on_default_box():
    box = fl.Box(64, 2 * np.pi * 16, 1)
    x = embed(box)
    r = np.abs(box.x[..., 0])
    edge = r >= 0.4 * box.L
    E = fo.rotational_closed_form(x, 1.0, 3)
    assert np.max(np.abs(E[edge])) < 1e-6


def test_rotational_norm_linear_in_eps():
    box = fl.Box(16, 2 * np.pi * 4, 3)
    vals = [fo.force_norm_report(fo.rotational_field(e, 3), box, 4)["total"]
            for e in (1e-4, 1e-3, 1e-2)]
    assert vals[1] / vals[0] == pytest.approx(10, rel=1e-10)
    assert vals[2] / vals[1] == pytest.approx(10, rel=1e-10)
    assert np.all(np.isfinite(vals)) and vals[0] > 0


# ------------------------------------------------------------ potential field

def test_potential_zero_and_gradient_properties():
    box = fl.Box(16, 2 * np.pi * 2, 3)
    z = fo.potential_field(lambda b: np.zeros(b.shape))
    assert np.all(z.coeffs(box) == 0)
    E = fo.potential_field(fo.gaussian_potential(1e-2, 1.5))
    c = E.coeffs(box)
    assert np.max(np.abs(fo.spectral_curl(c, box))) < 1e-10
    assert np.all(np.abs(c.reshape(-1, 3)[0]) == 0)          # zero mean
    assert np.abs(E.physical(0.0, box).mean(axis=(0, 1, 2))).max() < 1e-16


def test_cosine_potential_gradient_exact():
    box = fl.Box(16, 10.0, 1)
    E = fo.potential_field(fo.cosine_potential(0.01, 2))
    k = 2 * np.pi * 2 / box.L
    exact = 0.01 * k * np.sin(k * box.x[..., 0])
    assert np.allclose(E.physical(0.0, box)[..., 0], exact, atol=1e-15)


# ------------------------------------------------------------ modulation

def test_periodicity_bit_exact():
    box = fl.Box(8, 2 * np.pi * 2, 3)
    T = 0.75
    E = fo.periodic_modulate(fo.rotational_field(1e-2, 3), T, "sin")
    for t in (0.0, 0.3125, 0.5, 0.6875):
        for k in (1, 2, 7, -3):
            assert E.theta(t + k * T) == E.theta(t)
            assert np.array_equal(E.at(t + k * T, box), E.at(t, box))


def test_sin_half_period_relation():
    E = fo.periodic_modulate(fo.rotational_field(1e-2, 3), 1.0, "sin")
    for t in (0.125, 0.25, 0.375):
        assert E.theta(0.5 + t) == -E.theta(t)


def test_square_smoothed_profile():
    f = fo.profile_function("square-smoothed", 2.0)
    ts = np.linspace(0, 2, 401)
    vals = np.array([f(t) for t in ts])
    assert np.max(np.abs(vals)) == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(np.diff(vals))) < 0.2          # continuous at this sampling
    with pytest.raises(ValueError):
        fo.profile_function("triangle", 1.0)
    with pytest.raises(ValueError):
        fo.periodic_modulate(fo.zero_field(), -1.0)


def test_constant_profile_is_stationary():
    box = fl.Box(8, 2 * np.pi * 2, 3)
    E = fo.rotational_field(1e-2, 3)
    assert E.period == math.inf
    assert np.array_equal(E.at(0.0, box), E.at(123.4, box))


def test_modulated_norm_bound_and_sampling():
    box = fl.Box(12, 2 * np.pi * 4, 3)
    base = fo.rotational_field(1e-2, 3)
    E = fo.periodic_modulate(base, 2.0, "sin")
    rb = fo.force_norm_report(base, box, 4)
    r64 = fo.force_norm_report(E, box, 4, n_samples=64)
    r128 = fo.force_norm_report(E, box, 4, n_samples=128)
    assert r64["total"] == pytest.approx(rb["total"], rel=1e-12)   # max |sin| sampled exactly
    assert r128["total"] == pytest.approx(r64["total"], rel=1e-2)
    E2 = fo.periodic_modulate(base, 2.0, "square-smoothed")
    assert fo.force_norm_report(E2, box, 4, 37)["total"] <= rb["total"] * (1 + 1e-12)


def test_force_report_zero_and_warning():
    box = fl.Box(8, 2 * np.pi * 2, 3)
    rep = fo.force_norm_report(fo.zero_field(), box, 4)
    assert rep["total"] == 0
    with pytest.warns(fo.SmallnessWarning):
        fo.force_norm_report(fo.rotational_field(1.0, 3), box, 4, delta=1e-6)
    back = fl.NormReport.from_json(rep.to_json())
    assert back.meta["kind"] == "zero"


# ------------------------------------------------------------ custom spectral

def test_custom_spectral_roundtrip(tmp_path):
    box = fl.Box(8, 10.0, 2)
    spec = {"L": 10.0, "modes": [[1, 0, 0.0, 0.0, 0.5, 0.25, 0.0, 0.0]]}
    p = tmp_path / "force.json"
    p.write_text(json.dumps(spec))
    E = fo.custom_spectral(p)
    c = E.coeffs(box)
    assert c[1, 0, 1] == 0.5 + 0.25j and c[-1, 0, 1] == 0.5 - 0.25j
    phys = box.ifft(c)
    assert np.max(np.abs(phys.imag)) < 1e-15
    with pytest.raises(ValueError):
        E.coeffs(fl.Box(8, 11.0, 2))
    bad = fo.custom_spectral({"L": 10.0, "modes": [[4, 0, 1, 0, 0, 0, 0, 0]]})
    with pytest.raises(ValueError):
        bad.coeffs(box)
