import math

import numpy as np
import pytest

from hsboltz.cauchy_solver import SolverConfig, Stepper, step
from hsboltz.collision_ops import CollisionModel
from hsboltz.forcing import rotational_field, zero_field
from hsboltz.fourier_lp import Box, DistributionField, besov_norm
from hsboltz.stability_harness import (StabilityScenario, difference_norms,
                                       error_equation_residual, run_difference_decay,
                                       shell_profile, synthesize_initial_difference)
from hsboltz.velocity_space import build_grid


@pytest.fixture(scope="module")
def model():
    return CollisionModel(build_grid(4.0, 8))


@pytest.fixture(scope="module")
def box():
    return Box(32, 2 * np.pi * 4, 1)


@pytest.mark.parametrize("s0", [-0.4, 0.0, 0.5])
def test_synthesized_difference_has_flat_shells(model, box, s0):
    f = synthesize_initial_difference(box, model, s0, 1e-3, seed=3)
    js, prof = shell_profile(f, s0)
    assert len(js) >= 3
    np.testing.assert_allclose(prof / prof.max(), 1.0, atol=1e-6)
    assert besov_norm(f.coeffs, s0, math.inf, dv=f.dv, box=box) == pytest.approx(1e-3, rel=1e-12)


def test_synthesis_is_real_seeded_and_linear(model, box):
    a = synthesize_initial_difference(box, model, -0.3, 1e-3, seed=7)
    b = synthesize_initial_difference(box, model, -0.3, 2e-3, seed=7)
    c = synthesize_initial_difference(box, model, -0.3, 1e-3, seed=8)
    np.testing.assert_allclose(b.coeffs, 2 * a.coeffs, rtol=1e-12, atol=0)
    assert not np.allclose(a.coeffs, c.coeffs)
    assert np.abs(a.coeffs - np.conj(box.neg_index(a.coeffs))).max() == 0
    assert not a.coeffs[0].any()                            # zero mode left empty


def test_scenario_validation(model, box):
    f = DistributionField.zeros(box, model.grid)
    with pytest.raises(ValueError):
        StabilityScenario(zero_field(), f, f, s0=-0.6, targets=[0.5])     # below -d/2
    with pytest.raises(ValueError):
        StabilityScenario(zero_field(), f, f, s0=0.6, targets=[0.7])
    with pytest.raises(ValueError):
        StabilityScenario(zero_field(), f, f, s0=0.0, targets=[-0.1])
    with pytest.raises(ValueError):
        StabilityScenario(zero_field(), f, f, s0=0.0, targets=[0.5], eps=0.5)


def test_identical_solutions_give_zero_difference(model):
    box = Box(8, 2 * np.pi, 1)
    f = synthesize_initial_difference(box, model, 0.0, 1e-3)
    sc = StabilityScenario(rotational_field(1e-3), f, f.copy(), 0.0, [0.5], horizon=1.0,
                           n_samples=4)
    fits, series = run_difference_decay(sc, SolverConfig(dt=0.25, scheme="strang"), model)
    assert fits == []
    for k, v in series.items():
        if k != "t":
            assert not np.any(v), k


def test_difference_decay_run_reports_every_family(model):
    box = Box(8, 2 * np.pi, 1)
    f1 = synthesize_initial_difference(box, model, -0.2, 1e-3, seed=1)
    f2 = DistributionField.zeros(box, model.grid)
    sc = StabilityScenario(zero_field(), f1, f2, -0.2, [0.3, 0.5], horizon=4.0, n_samples=8)
    fits, series = run_difference_decay(sc, SolverConfig(dt=0.25, scheme="strang"), model)
    labels = [f.label for f in fits]
    assert labels == ["besov_s=0.3", "besov_s=0.5", "micro_l2", "weighted", "mixed"]
    assert fits[0].expected_rate == pytest.approx(0.25)
    assert fits[2].expected_rate == pytest.approx((1 - 0.1 + 0.2) / 2)
    for k in ("besov_s=0.5", "micro_l2"):
        assert series[k][-1] < series[k][0]
    assert np.all(np.diff(series["t"]) > 0)


def test_norm_families_are_homogeneous(model):
    box = Box(8, 2 * np.pi, 1)
    f = synthesize_initial_difference(box, model, 0.0, 1e-3, seed=2)
    a = difference_norms(f.coeffs, box, model, [0.5])
    b = difference_norms(-3 * f.coeffs, box, model, [0.5])
    for k in a:
        assert b[k] == pytest.approx(3 * a[k], rel=1e-10)
    z = difference_norms(np.zeros_like(f.coeffs), box, model, [0.5])
    assert all(v == 0 for v in z.values())


def test_error_equation_residual_is_second_order(model):
    box = Box(8, 2 * np.pi, 1)
    E = rotational_field(1e-2)
    f1 = synthesize_initial_difference(box, model, 0.0, 2e-2, seed=4)
    f2 = synthesize_initial_difference(box, model, 0.0, 2e-2, seed=5)
    res = []
    for dt in (0.02, 0.01):
        cfg = SolverConfig(dt=dt, scheme="strang")
        st = Stepper(box, model, cfg)
        res.append(error_equation_residual(f1, step(f1, E, cfg, st), f2, step(f2, E, cfg, st),
                                           E, st, dt))
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.2)


def test_linearized_route_fits_expected_rates():
    from hsboltz.stability_harness import run_difference_decay_linear
    lin = CollisionModel(build_grid(3.0, 6)).linearized()
    box = Box(16, 2 * np.pi * 8, 3)
    times = np.geomspace(1.0, 40.0, 12)
    fits, ser = run_difference_decay_linear(lin, box, -1.0, [-1.0, 0.5], times)
    assert [f.expected_rate for f in fits] == [0.0, 0.75]
    # on this short box the lowest shell already feels the heat rate, so s = s0 is
    # only required to decay much more slowly than the smoother norm
    assert fits[0].fitted_rate < 0.2
    assert fits[1].fitted_rate > 2 * fits[0].fitted_rate
