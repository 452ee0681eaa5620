"""Experiment runners behind ``hsboltz run``; each returns a plain-data report."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .cauchy_solver import TRACE_COLUMNS, lyapunov_monitor, solve
from .collision_ops import CollisionModel
from .config import RunConfig, needs_collision_events
from .fourier_lp import Box, DistributionField, save_snapshot
from .linear_semigroup import (besov_decay_series, fits_to_csv, heat_branch_spread,
                               shell_profiles, verify_besov_decay, verify_pointwise_decay)
from .period_map import (ConvergenceWarning, serrin_iterate, stationary_oracle,
                         verify_periodicity)
from .stability_harness import (StabilityScenario, run_difference_decay,
                                run_difference_decay_linear, synthesize_initial_difference)
from .velocity_space import build_grid


class NumericalFailure(RuntimeError):
    """An experiment finished but its numerical outcome is unusable."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def _fit_dict(f):
    return {"label": f.label, "x": f.x, "kind": f.kind, "fitted": f.fitted_rate,
            "expected": f.expected_rate, "prefactor": f.prefactor, "residual": f.residual,
            "window": list(f.window)}


def _setup(cfg: RunConfig):
    g = cfg.grid
    grid = build_grid(g.R, g.n_v, g.n_angular)
    model = CollisionModel(grid, event_budget=cfg.budget.event_budget,
                           store_events=None if needs_collision_events(cfg) else False)
    box = Box(g.n_x, g.L_box, g.d)
    return grid, model, box


def _initial(cfg: RunConfig, box, model, seed_offset=0):
    p = cfg.params
    if p.initial == "zero":
        return DistributionField.zeros(box, model.grid)
    return synthesize_initial_difference(box, model, p.s0, p.amplitude, cfg.seed + seed_offset)


def run_cauchy(cfg: RunConfig, out: Path):
    grid, model, box = _setup(cfg)
    scfg = cfg.solver_config()
    E = cfg.force.build()
    f0 = _initial(cfg, box, model)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        f, trace = solve(f0, E, scfg, cfg.params.t_end, model, trace_path=out / "trace.csv")
    save_snapshot(out / "final.snap", f)
    last = dict(zip(TRACE_COLUMNS, trace.rows[-1]))
    return {"final": {k: float(v) for k, v in last.items()},
            "meta": {k: v for k, v in trace.meta.items() if isinstance(v, (int, float, str))},
            "lyapunov": None if len(trace) < 10 else {
                k: v for k, v in lyapunov_monitor(trace).items()
                if isinstance(v, (int, float, str, bool))},
            "warnings": sorted({type(w.message).__name__ for w in caught})}


def run_period_map(cfg: RunConfig, out: Path):
    grid, model, box = _setup(cfg)
    scfg = cfg.solver_config()
    E = cfg.force.build()
    p = cfg.params
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        f, rep = serrin_iterate(E, scfg, box, model, p.n_max, p.tol, p.eps, period=p.period,
                                snapshot=out / "periodic.snap")
    rep.residual = verify_periodicity(f, E, scfg, model, p.eps, period=p.period)
    (out / "period_map.csv").write_text(rep.to_csv())
    if not rep.converged:
        raise NumericalFailure(f"period map did not reach tol={p.tol} in {p.n_max} periods",
                               asdict(rep))
    return asdict(rep)


def run_stationary_oracle(cfg: RunConfig, out: Path):
    grid, model, box = _setup(cfg)
    p = cfg.params
    r = stationary_oracle(cfg.force.potential(), cfg.solver_config(), box, model,
                          period=p.period or 5.0, n_max=p.n_max, tol=p.tol, eps=p.eps)
    save_snapshot(out / "stationary.snap", r["field"])
    rep = {"error": r["error"], "error_perturbation": r["error_perturbation"],
           "phi_max": r["phi_max"], "converged": r["converged"], "periods": r["n"],
           "threshold": p.threshold, "passed": bool(r["converged"] and r["error"] < p.threshold),
           "d": r["report"].d}
    if not rep["passed"]:
        raise NumericalFailure(f"stationary error {r['error']:.3e} >= {p.threshold}", rep)
    return rep


def _xis(cfg: RunConfig, box):
    if cfg.params.xis is not None:
        return [np.asarray(x, float) for x in cfg.params.xis]
    e = np.eye(3)[0]
    return [k * box.dxi * e for k in (1, 2, 3)] + [r * e for r in (1.0, 1.5, 2.0)]


def run_semigroup_decay(cfg: RunConfig, out: Path):
    grid, model, box = _setup(cfg)
    lin = model.linearized(cfg.budget.memory_budget)
    fits = verify_pointwise_decay(lin, _xis(cfg, box), cfg.params.t_max, seed=cfg.seed)
    (out / "fits.csv").write_text(fits_to_csv(fits))
    small = [f for f in fits if f.x < 1.0]
    rep = {"fits": [_fit_dict(f) for f in fits]}
    if len(small) >= 2:
        rep["heat_branch_spread"] = heat_branch_spread(small)[0]
    return rep


def run_besov_decay(cfg: RunConfig, out: Path):
    grid, model, box = _setup(cfg)
    lin = model.linearized(cfg.budget.memory_budget)
    p = cfg.params
    times = np.geomspace(1.0, p.t_max, p.n_times)
    prof = shell_profiles(lin)
    ser = besov_decay_series(lin, box, p.s0, p.j0, times, "low",
                             profiles={k: prof[k] for k in p.profiles})
    window = tuple(p.window) if p.window else None
    fits = [verify_besov_decay(ser, s, p.s0, name, window) for name in p.profiles
            for s in p.targets]
    (out / "fits.csv").write_text(fits_to_csv(fits))
    return {"fits": [_fit_dict(f) for f in fits]}


def run_stability(cfg: RunConfig, out: Path):
    grid, model, box = _setup(cfg)
    p = cfg.params
    window = tuple(p.window) if p.window else None
    if box.d == 3:
        lin = model.linearized(cfg.budget.memory_budget)
        times = np.geomspace(1.0, p.horizon, p.n_samples)
        fits, _ = run_difference_decay_linear(lin, box, p.s0, p.targets, times, window,
                                              cfg.solver.N, p.j0)
    else:
        f1 = DistributionField.zeros(box, model.grid)
        diff = synthesize_initial_difference(box, model, p.s0, p.amplitude, cfg.seed)
        f2 = DistributionField(box, model.grid, f1.coeffs + diff.coeffs)
        sc = StabilityScenario(cfg.force.build(), f1, f2, p.s0, p.targets, p.eps, p.horizon,
                               p.n_samples, window)
        fits, _ = run_difference_decay(sc, cfg.solver_config(), model)
    (out / "fits.csv").write_text(fits_to_csv(fits))
    return {"fits": [_fit_dict(f) for f in fits]}


RUNNERS = {"cauchy": run_cauchy, "period-map": run_period_map,
           "stationary-oracle": run_stationary_oracle, "semigroup-decay": run_semigroup_decay,
           "besov-decay": run_besov_decay, "stability": run_stability}


def clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj
