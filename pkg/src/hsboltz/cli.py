"""Command line: run, compare, norms, cache-grid.

Exit codes: 0 success, 2 validation, 3 numerical failure, 4 budget.
"""
from __future__ import annotations

import argparse
import fnmatch
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cauchy_solver import BlowUpError
from .collision_ops import BudgetError, CollisionModel
from .config import RunConfig, ValidationError, budget_check, load_config
from .experiments import RUNNERS, NumericalFailure, clean
from .fourier_lp import energy_norm, load_snapshot
from .linear_semigroup import KrylovError
from .velocity_space import build_grid, save_grid_tables

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_BUDGET = 0, 2, 3, 4


def _dump(obj) -> str:
    return json.dumps(clean(obj), sort_keys=True, indent=1) + "\n"


def _diagnostic(kind, message, **extra):
    print(json.dumps({"status": "error", "kind": kind, "message": str(message), **extra},
                     sort_keys=True), file=sys.stderr)


def _sha(path: Path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_report(cfg: RunConfig, out: Path, results, status="ok"):
    report = {"experiment": cfg.experiment, "config_hash": cfg.config_hash(), "seed": cfg.seed,
              "status": status, "results": results}
    (out / "report.json").write_text(_dump(report))


def run(cfg: RunConfig, out: Path | None = None) -> int:
    """Validate budgets, run the experiment, write report.json and manifest.json."""
    out = Path(out or cfg.output)
    try:
        budget_check(cfg)
    except BudgetError as e:
        _diagnostic("budget", e)
        return EXIT_BUDGET
    out.mkdir(parents=True, exist_ok=True)
    t0, c0 = time.perf_counter(), time.process_time()
    code, status = EXIT_OK, "ok"
    try:
        results = RUNNERS[cfg.experiment](cfg, out)
    except NumericalFailure as e:
        _diagnostic("numerical", e)
        results, code, status = e.report or {}, EXIT_NUMERICAL, "numerical-failure"
    except (BlowUpError, KrylovError, FloatingPointError, np.linalg.LinAlgError) as e:
        _diagnostic("numerical", e)
        results, code, status = {"error": str(e)}, EXIT_NUMERICAL, "numerical-failure"
    except (BudgetError, MemoryError) as e:
        _diagnostic("budget", e)
        results, code, status = {"error": str(e)}, EXIT_BUDGET, "budget"
    write_report(cfg, out, results, status)
    files = sorted(p for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {"config_hash": cfg.config_hash(), "version": __version__,
                "experiment": cfg.experiment, "status": status, "workers": cfg.workers,
                "timings": {"wall_s": time.perf_counter() - t0, "cpu_s": time.process_time() - c0},
                "python": platform.python_version(), "numpy": np.__version__,
                "config": cfg.physics_dict(),
                "files": {p.name: _sha(p) for p in files}}
    (out / "manifest.json").write_text(_dump(manifest))
    return code


# ---------------------------------------------------------------- compare

class SchemaError(ValueError):
    pass


def _leaves(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _leaves(v, f"{prefix}.{k}" if prefix else k)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _leaves(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def compare_reports(path_a, path_b, tolerances: dict | None = None, force: bool = False) -> dict:
    """Field-by-field relative differences of two report.json files.

    ``tolerances`` maps glob patterns over flattened keys (e.g. "results.error") to
    relative tolerances; unmatched keys get 0.  Only nonzero differences are listed.
    """
    a = json.loads(Path(path_a).read_text())
    b = json.loads(Path(path_b).read_text())
    if a.get("experiment") != b.get("experiment"):
        raise SchemaError(f"experiment mismatch: {a.get('experiment')} vs {b.get('experiment')}")
    if a.get("config_hash") != b.get("config_hash") and not force:
        raise SchemaError("config hashes differ (use force to compare anyway)")
    la, lb = dict(_leaves(a["results"], "results")), dict(_leaves(b["results"], "results"))
    missing = sorted(set(la) ^ set(lb))
    if missing:
        raise SchemaError(f"report fields differ: {missing[:5]}")
    tolerances = tolerances or {}
    diffs, exceeded = {}, []
    for k in sorted(la):
        x, y = la[k], lb[k]
        if x == y:
            continue
        if isinstance(x, (int, float)) and isinstance(y, (int, float)) \
                and not isinstance(x, bool) and not isinstance(y, bool):
            rel = abs(x - y) / max(abs(x), abs(y))
        else:
            rel = float("inf")
        tol = max((t for pat, t in tolerances.items() if fnmatch.fnmatch(k, pat)), default=0.0)
        diffs[k] = {"a": x, "b": y, "rel": rel, "tol": tol}
        if rel > tol:
            exceeded.append(k)
    return {"differences": diffs, "exceeded": exceeded,
            "hash_match": a.get("config_hash") == b.get("config_hash")}


# ---------------------------------------------------------------- commands

def _cmd_run(args):
    try:
        cfg = load_config(args.config)
        if args.workers is not None:
            cfg.workers = args.workers
    except ValidationError as e:
        print(json.dumps(e.as_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_VALIDATION
    return run(cfg, args.output)


def _cmd_compare(args):
    tol = {}
    for item in args.tol or []:
        pat, _, val = item.partition("=")
        tol[pat] = float(val)
    try:
        diff = compare_reports(args.a, args.b, tol, args.force)
    except (SchemaError, KeyError, json.JSONDecodeError) as e:
        _diagnostic("schema", e)
        return EXIT_VALIDATION
    print(_dump(diff), end="")
    return 1 if diff["exceeded"] else EXIT_OK


def _cmd_norms(args):
    try:
        f = load_snapshot(args.snapshot)
    except (OSError, ValueError) as e:
        _diagnostic("validation", e)
        return EXIT_VALIDATION
    print(energy_norm(f, args.s, args.N).to_json())
    return EXIT_OK


def _cmd_cache_grid(args):
    try:
        cfg = load_config(args.config)
        budget_check(cfg)
    except ValidationError as e:
        print(json.dumps(e.as_dict(), sort_keys=True), file=sys.stderr)
        return EXIT_VALIDATION
    except BudgetError as e:
        _diagnostic("budget", e)
        return EXIT_BUDGET
    cache = Path(args.cache_dir or os.environ.get("HSBOLTZ_CACHE") or "hsboltz-cache")
    g = cfg.grid
    grid = build_grid(g.R, g.n_v, g.n_angular)
    model = CollisionModel(grid, event_budget=cfg.budget.event_budget, store_events=False)
    model.linearized(cfg.budget.memory_budget, cache_dir=cache)
    tables = cache / f"grid_R{g.R:g}_n{g.n_v}_a{g.n_angular}.bin"
    save_grid_tables(tables, grid)
    print(json.dumps({"cache": str(cache), "grid_tables": tables.name}))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="hsboltz", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the experiment named in a config file")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="override the output directory")
    r.add_argument("--workers", type=int, help="override the worker count")
    r.set_defaults(fn=_cmd_run)
    c = sub.add_parser("compare", help="field-by-field difference of two reports")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--tol", action="append", metavar="PATTERN=REL",
                   help="relative tolerance for keys matching PATTERN (repeatable)")
    c.add_argument("--force", action="store_true", help="compare despite differing config hashes")
    c.set_defaults(fn=_cmd_compare)
    n = sub.add_parser("norms", help="energy-norm report of a saved field")
    n.add_argument("snapshot")
    n.add_argument("--s", type=float, default=0.5)
    n.add_argument("--N", type=int, default=3)
    n.set_defaults(fn=_cmd_norms)
    g = sub.add_parser("cache-grid", help="prebuild velocity tables and the linearized operator")
    g.add_argument("config")
    g.add_argument("--cache-dir", help="defaults to $HSBOLTZ_CACHE")
    g.set_defaults(fn=_cmd_cache_grid)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
