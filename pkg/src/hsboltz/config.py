"""Run configuration: one TOML (or JSON) file with grid, solver, force, params and budget tables.

Canonical layout::

    experiment = "stationary-oracle"   # semigroup-decay | besov-decay | cauchy | period-map
                                       # | stationary-oracle | stability
    seed = 0
    output = "runs/oracle"
    workers = 1

    [grid]    R, n_v, n_angular, d, n_x, L_box
    [solver]  any SolverConfig field (dt, scheme, N, ...)
    [force]   kind = zero | rotational | gaussian-potential | cosine-potential | custom-spectral
              eps, m, scale, amp, width, k, period, profile, path
    [params]  experiment parameters (see ExperimentParams)
    [budget]  event_budget, memory_budget, propagator_budget
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as tomllib

from .cauchy_solver import SolverConfig
from .collision_ops import DEFAULT_EVENT_BUDGET, DEFAULT_MEMORY_BUDGET, estimated_events
from .forcing import (ForceField, cosine_potential, custom_spectral, gaussian_potential,
                      periodic_modulate, potential_field, rotational_field, zero_field)

EXPERIMENTS = ("semigroup-decay", "besov-decay", "cauchy", "period-map", "stationary-oracle",
               "stability")
FORCE_KINDS = ("zero", "rotational", "gaussian-potential", "cosine-potential", "custom-spectral")


class ValidationError(ValueError):
    """A configuration constraint is violated; ``constraint`` names it."""

    def __init__(self, constraint: str, message: str):
        super().__init__(message)
        self.constraint = constraint

    def as_dict(self):
        return {"status": "error", "kind": "validation", "constraint": self.constraint,
                "message": str(self)}


@dataclass
class GridConfig:
    R: float = 4.0
    n_v: int = 8
    n_angular: int = 14
    d: int = 1
    n_x: int = 16
    L_box: float = 2 * math.pi


@dataclass
class ForceConfig:
    kind: str = "zero"
    eps: float = 1e-2            # rotational strength
    m: float = 3.0
    scale: float = 1.0
    amp: float = 1e-2            # potential amplitude
    width: float = 1.0
    k: int = 1
    period: float | None = None  # time modulation; None means stationary
    profile: str = "sin"
    path: str | None = None

    def build(self) -> ForceField:
        if self.kind == "zero":
            E = zero_field()
        elif self.kind == "rotational":
            E = rotational_field(self.eps, self.m, self.scale)
        elif self.kind == "gaussian-potential":
            E = potential_field(self.potential(), {"amp": self.amp, "width": self.width})
        elif self.kind == "cosine-potential":
            E = potential_field(self.potential(), {"amp": self.amp, "k": self.k})
        else:
            E = custom_spectral(self.path)
        if self.period is not None and self.kind != "zero":
            E = periodic_modulate(E, self.period, self.profile)
        return E

    def potential(self):
        if self.kind == "gaussian-potential":
            return gaussian_potential(self.amp, self.width)
        if self.kind == "cosine-potential":
            return cosine_potential(self.amp, self.k)
        raise ValidationError("force.kind", f"force kind {self.kind!r} has no potential")


@dataclass
class ExperimentParams:
    # time horizons
    t_end: float = 10.0
    horizon: float = 100.0
    n_samples: int = 40
    window: list | None = None
    # regularity
    s0: float = -1.4
    targets: list = field(default_factory=lambda: [0.5])
    eps: float = 0.1
    j0: int = -1
    # initial data: zero | synthesized
    initial: str = "zero"
    amplitude: float = 1e-3
    # period map
    tol: float = 1e-9
    n_max: int = 200
    period: float | None = None
    threshold: float = 1e-3
    # semigroup / Besov series
    xis: list | None = None
    t_max: float = 200.0
    n_times: int = 40
    profiles: list = field(default_factory=lambda: ["generic", "micro"])


@dataclass
class BudgetConfig:
    event_budget: float = DEFAULT_EVENT_BUDGET
    memory_budget: float = DEFAULT_MEMORY_BUDGET
    propagator_budget: float = 2.0e9


@dataclass
class RunConfig:
    experiment: str
    seed: int = 0
    output: str = "run"
    workers: int = 1
    grid: GridConfig = field(default_factory=GridConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    force: ForceConfig = field(default_factory=ForceConfig)
    params: ExperimentParams = field(default_factory=ExperimentParams)
    budget: BudgetConfig = field(default_factory=BudgetConfig)

    def physics_dict(self):
        """Everything that can change results; output location and worker count excluded."""
        d = asdict(self)
        d.pop("output")
        d.pop("workers")
        d["solver"].pop("workers")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.physics_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def solver_config(self) -> SolverConfig:
        d = asdict(self.solver)
        d["workers"] = self.workers
        d["propagator_budget"] = self.budget.propagator_budget
        return SolverConfig(**d)


def _build(cls, data, section):
    if not isinstance(data, dict):
        raise ValidationError(section, f"[{section}] must be a table")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(f"{section}.{unknown[0]}", f"unknown key {unknown[0]!r} in [{section}]")
    try:
        return cls(**data)
    except ValidationError:
        raise
    except (TypeError, ValueError) as e:
        raise ValidationError(section, f"[{section}]: {e}") from None


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    if "experiment" not in d:
        raise ValidationError("experiment", "missing key 'experiment'")
    sections = {"grid": GridConfig, "solver": SolverConfig, "force": ForceConfig,
                "params": ExperimentParams, "budget": BudgetConfig}
    kw = {k: _build(cls, d.pop(k, {}), k) for k, cls in sections.items()}
    top = {"experiment", "seed", "output", "workers"}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ValidationError(unknown[0], f"unknown top-level key {unknown[0]!r}")
    cfg = RunConfig(**d, **kw)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ValidationError("path", f"cannot read config: {e}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ValidationError("syntax", f"cannot parse {path.name}: {e}") from None
    return from_dict(data)


def validate(cfg: RunConfig):
    g, p, s = cfg.grid, cfg.params, cfg.solver
    if cfg.experiment not in EXPERIMENTS:
        raise ValidationError("experiment", f"experiment must be one of {EXPERIMENTS}")
    if not isinstance(g.n_v, int) or g.n_v % 2:
        raise ValidationError("grid.n_v", "velocity grid must be even (n_v % 2 == 0)")
    if g.n_v < 4:
        raise ValidationError("grid.n_v", "velocity grid needs n_v >= 4")
    if g.d not in (1, 2, 3):
        raise ValidationError("grid.d", "spatial dimension must be 1, 2 or 3")
    if g.n_x < 4 or g.n_x % 2:
        raise ValidationError("grid.n_x", "spatial grid must be even with n_x >= 4")
    if not (g.R > 0 and g.L_box > 0):
        raise ValidationError("grid.R", "R and L_box must be positive")
    if cfg.workers < 1:
        raise ValidationError("workers", "workers must be >= 1")
    if cfg.experiment in ("period-map", "stability") and s.N < 4:
        raise ValidationError("solver.N", f"N >= 4 required for experiment {cfg.experiment}")
    if cfg.force.kind not in FORCE_KINDS:
        raise ValidationError("force.kind", f"force kind must be one of {FORCE_KINDS}")
    if cfg.force.kind == "custom-spectral" and not cfg.force.path:
        raise ValidationError("force.path", "custom-spectral force needs a path")
    if cfg.experiment == "stationary-oracle" and not cfg.force.kind.endswith("potential"):
        raise ValidationError("force.kind", "stationary-oracle needs a potential force")
    if cfg.experiment == "period-map" and cfg.force.period is None and p.period is None:
        raise ValidationError("params.period", "period-map needs force.period or params.period")
    if p.initial not in ("zero", "synthesized"):
        raise ValidationError("params.initial", "initial must be 'zero' or 'synthesized'")
    if cfg.experiment in ("stability", "besov-decay") and not -g.d / 2 < p.s0 <= 0.5:
        raise ValidationError("params.s0", f"s0 must lie in (-{g.d}/2, 1/2]")
    if not 0 < p.eps < 0.5:
        raise ValidationError("params.eps", "eps must lie in (0, 1/2)")
    if (cfg.experiment in ("cauchy", "period-map", "stationary-oracle")
            and g.d == 3 and s.nonlinear and not s.allow_3d_nonlinear):
        raise ValidationError("solver.allow_3d_nonlinear",
                              "nonlinear d=3 runs need solver.allow_3d_nonlinear = true")


def needs_collision_events(cfg: RunConfig) -> bool:
    return (cfg.experiment in ("cauchy", "period-map", "stationary-oracle")
            or (cfg.experiment == "stability" and cfg.grid.d < 3)) and cfg.solver.nonlinear


def budget_check(cfg: RunConfig):
    """Raise BudgetError before anything large is allocated."""
    from .collision_ops import BudgetError
    g, b = cfg.grid, cfg.budget
    N = g.n_v ** 3
    dense = 4 * 8.0 * N * N
    if dense > b.memory_budget:
        raise BudgetError(f"dense velocity operators need {dense / 1e9:.2f} GB "
                          f"> memory_budget {b.memory_budget / 1e9:.2f} GB")
    if needs_collision_events(cfg) and estimated_events(g.n_v) > b.event_budget:
        raise BudgetError(f"n_v={g.n_v} needs ~{estimated_events(g.n_v):.2e} collision events "
                          f"> event_budget {b.event_budget:.2e}")
    if cfg.experiment in ("cauchy", "period-map", "stationary-oracle", "stability") and g.d < 3:
        field_bytes = 16.0 * g.n_x ** g.d * N * 12      # working copies of one field
        if field_bytes > b.memory_budget:
            raise BudgetError(f"distribution fields need {field_bytes / 1e9:.2f} GB "
                              f"> memory_budget {b.memory_budget / 1e9:.2f} GB")
