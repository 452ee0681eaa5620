import json
import math

import pytest

from hsboltz import cli
from hsboltz.config import RunConfig, ValidationError, from_dict, load_config


def write_toml(path, text):
    path.write_text(text)
    return str(path)


CAUCHY = """
experiment = "cauchy"
seed = 3
[grid]
R = 4.0
n_v = 8
d = 1
n_x = 8
L_box = 6.283185307179586
[solver]
dt = 0.25
scheme = "strang"
monitor_every = 2
[force]
kind = "{force}"
eps = 1e-3
[params]
t_end = {t_end}
initial = "{initial}"
s0 = 0.0
amplitude = 1e-3
"""


def cauchy_cfg(tmp_path, name="c.toml", force="zero", initial="zero", t_end=1.0):
    return write_toml(tmp_path / name, CAUCHY.format(force=force, initial=initial, t_end=t_end))


def run_cli(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_odd_velocity_grid_is_rejected(tmp_path, capsys):
    p = write_toml(tmp_path / "bad.toml", 'experiment = "cauchy"\n[grid]\nn_v = 7\n')
    code, _, err = run_cli(["run", p, "-o", str(tmp_path / "o")], capsys)
    assert code == 2
    diag = json.loads(err.strip().splitlines()[-1])
    assert diag["constraint"] == "grid.n_v"
    assert "velocity grid must be even" in diag["message"]
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("text, constraint", [
    ('experiment = "period-map"\n[force]\nkind = "rotational"\nperiod = 5.0\n', "solver.N"),
    ('experiment = "cauchy"\n[grid]\nbogus = 1\n', "grid.bogus"),
    ('experiment = "sideways"\n', "experiment"),
    ('experiment = "stationary-oracle"\n', "force.kind"),
    ('experiment = "cauchy"\n[grid]\nd = 3\n', "solver.allow_3d_nonlinear"),
    ('experiment = "cauchy"\n[solver]\nscheme = "rk4"\n', "solver"),
    ('experiment = "cauchy"\n[grid\n', "syntax"),
])
def test_cross_field_constraints_are_named(tmp_path, text, constraint):
    with pytest.raises(ValidationError) as e:
        load_config(write_toml(tmp_path / "x.toml", text))
    assert e.value.constraint == constraint


def test_json_config_is_equivalent(tmp_path):
    a = load_config(cauchy_cfg(tmp_path))
    d = {"experiment": "cauchy", "seed": 3,
         "grid": {"R": 4.0, "n_v": 8, "d": 1, "n_x": 8, "L_box": 2 * math.pi},
         "solver": {"dt": 0.25, "scheme": "strang", "monitor_every": 2},
         "force": {"kind": "zero", "eps": 1e-3},
         "params": {"t_end": 1.0, "initial": "zero", "s0": 0.0, "amplitude": 1e-3}}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(d))
    b = load_config(p)
    assert a.config_hash() == b.config_hash()
    assert isinstance(b, RunConfig)


def test_hash_ignores_workers_and_output(tmp_path):
    a = load_config(cauchy_cfg(tmp_path))
    b = load_config(cauchy_cfg(tmp_path))
    b.workers, b.output = 8, "elsewhere"
    assert a.config_hash() == b.config_hash()
    b.seed = 4
    assert a.config_hash() != b.config_hash()


def test_zero_cauchy_run_gives_zero_trace(tmp_path, capsys):
    out = tmp_path / "run"
    code, _, err = run_cli(["run", cauchy_cfg(tmp_path), "-o", str(out)], capsys)
    assert code == 0, err
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "ok"
    for k in ("energy", "EH", "l2", "mass", "force_sq"):
        assert rep["results"]["final"][k] == 0.0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == rep["config_hash"]
    assert man["version"]
    assert man["timings"]["wall_s"] > 0
    assert {"report.json", "trace.csv", "final.snap"} <= set(man["files"])
    code, text, _ = run_cli(["norms", str(out / "final.snap")], capsys)
    assert code == 0
    assert json.loads(text)["values"]["total"] == 0.0


def test_budget_overrun_aborts_before_allocation(tmp_path, capsys):
    p = write_toml(tmp_path / "b.toml", 'experiment = "cauchy"\n[grid]\nn_v = 16\n'
                   '[budget]\nevent_budget = 1e6\n')
    code, _, err = run_cli(["run", p, "-o", str(tmp_path / "o")], capsys)
    assert code == 4
    assert json.loads(err.strip())["kind"] == "budget"
    assert not (tmp_path / "o").exists()


def test_workers_do_not_change_reports(tmp_path, capsys):
    p = cauchy_cfg(tmp_path, force="rotational", initial="synthesized", t_end=2.0)
    for w in (1, 8):
        code, _, err = run_cli(["run", p, "-o", str(tmp_path / f"w{w}"), "--workers", str(w)],
                               capsys)
        assert code == 0, err
    a = (tmp_path / "w1" / "report.json").read_bytes()
    b = (tmp_path / "w8" / "report.json").read_bytes()
    assert a == b
    assert (tmp_path / "w1" / "trace.csv").read_bytes() == (tmp_path / "w8" / "trace.csv").read_bytes()


def test_compare_reports(tmp_path, capsys):
    base = cauchy_cfg(tmp_path, "a.toml", force="rotational", initial="synthesized")
    fine = write_toml(tmp_path / "b.toml", (tmp_path / "a.toml").read_text()
                      .replace("dt = 0.25", "dt = 0.125").replace("monitor_every = 2",
                                                                  "monitor_every = 4"))
    for p, o in ((base, "a"), (fine, "b")):
        assert run_cli(["run", p, "-o", str(tmp_path / o)], capsys)[0] == 0
    ra, rb = str(tmp_path / "a" / "report.json"), str(tmp_path / "b" / "report.json")
    same = cli.compare_reports(ra, ra)
    assert same["differences"] == {} and same["exceeded"] == []
    with pytest.raises(cli.SchemaError):
        cli.compare_reports(ra, rb)                         # hashes differ
    d = cli.compare_reports(ra, rb, {"results.final.*": 0.02}, force=True)
    # second-order scheme: halving dt moves the terminal state by a small relative amount
    assert d["differences"]["results.final.l2"]["rel"] < 0.02
    code, text, _ = run_cli(["compare", ra, rb], capsys)
    assert code == 2
    code, text, _ = run_cli(["compare", ra, rb, "--force", "--tol", "results.*=1"], capsys)
    assert code == 0 and json.loads(text)["hash_match"] is False


def test_compare_refuses_different_experiments(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    a.write_text(json.dumps({"experiment": "cauchy", "config_hash": "x", "results": {}}))
    b.write_text(json.dumps({"experiment": "period-map", "config_hash": "x", "results": {}}))
    with pytest.raises(cli.SchemaError):
        cli.compare_reports(a, b, force=True)


def test_cache_grid_uses_env_directory(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HSBOLTZ_CACHE", str(tmp_path / "cache"))
    p = write_toml(tmp_path / "g.toml", 'experiment = "semigroup-decay"\n[grid]\nn_v = 6\nR = 3.0\n')
    code, text, _ = run_cli(["cache-grid", p], capsys)
    assert code == 0
    files = sorted(x.name for x in (tmp_path / "cache").iterdir())
    assert any(f.startswith("linop_") for f in files) and any(f.startswith("grid_") for f in files)


def test_stationary_oracle_default_potential(tmp_path, capsys):
    p = write_toml(tmp_path / "s.toml", """
experiment = "stationary-oracle"
[grid]
n_v = 8
n_x = 8
[solver]
dt = 0.5
scheme = "strang"
[force]
kind = "gaussian-potential"
[params]
tol = 1e-7
""")
    code, _, err = run_cli(["run", p, "-o", str(tmp_path / "s")], capsys)
    assert code == 0, err
    rep = json.loads((tmp_path / "s" / "report.json").read_text())["results"]
    assert rep["passed"] and rep["error"] < 1e-3 and rep["phi_max"] == pytest.approx(1e-2)


def test_unconverged_period_map_exits_numerical(tmp_path, capsys):
    p = write_toml(tmp_path / "p.toml", """
experiment = "period-map"
[grid]
n_v = 8
n_x = 8
[solver]
dt = 0.5
scheme = "strang"
N = 4
[force]
kind = "rotational"
eps = 1e-3
period = 2.0
[params]
n_max = 2
tol = 1e-30
""")
    code, _, err = run_cli(["run", p, "-o", str(tmp_path / "p")], capsys)
    assert code == 3
    rep = json.loads((tmp_path / "p" / "report.json").read_text())
    assert rep["status"] == "numerical-failure" and len(rep["results"]["d"]) == 2


def test_from_dict_requires_experiment():
    with pytest.raises(ValidationError):
        from_dict({"seed": 1})
