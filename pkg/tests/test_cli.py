import json

import numpy as np
import pytest

from coagdiff import cli
from coagdiff.config import SCHEMA, ConfigError, Settings
from coagdiff.kernels import ProductPower, SumPower
from coagdiff.simulator import SolverAbort, TrajectoryRecord

SIM = """
[kernel]
family = sum_power
C = 1
gamma = 0.5

[diffusion]
family = limit
d_inf = 1
A = 1

[grid]
n = 24
N = 8

[time]
T = 0.05
dt = 1e-2
"""


@pytest.fixture
def sim_ini(tmp_path):
    p = tmp_path / "sim.ini"
    p.write_text(SIM)
    return p


def read_summary(out):
    return json.loads((out / "summary.json").read_text())


def test_settings_defaults_and_types(tmp_path, sim_ini):
    s = Settings.from_file(sim_ini)
    assert s.get_int("grid", "n") == 24 and s.get_int("grid", "N") == 8
    assert s.kernel() == SumPower(1, 0.5)
    cfg = s.sim_config()
    assert cfg.n == 24 and cfg.N == 8 and cfg.moments == (0, 1, 2)
    assert s.sim_config(homogeneous=True).N == 1
    assert s.tol("mass_drift_tol") == 1e-8
    s.apply_overrides(["grid.n=48", "checks.mass_drift_tol=1e-9"])
    assert s.get_int("grid", "n") == 48 and s.tol("mass_drift_tol") == 1e-9


def test_family_change_drops_default_parameters(tmp_path):
    p = tmp_path / "k.ini"
    p.write_text("[kernel]\nfamily = product_power\nalpha = 0.6\nbeta = 0.6\n")
    s = Settings.from_file(p)
    assert "gamma" not in s.section("kernel")
    assert s.kernel() == ProductPower(1, 0.6, 0.6)


@pytest.mark.parametrize("text,msg", [
    ("", "empty"),
    ("n = 3\n", "section"),
    ("[bogus]\nx = 1\n", "unknown section"),
    ("[grid]\nn = abc\n", ":2: [grid] n: invalid integer"),
    ("[grid]\nfoo = 1\n", ":2: unknown key"),
    ("[kernel]\nfamily = sum_power\n", "requires parameter 'gamma'"),
    ("[time]\nscheme = euler\n", "scheme"),
])
def test_config_errors(tmp_path, text, msg):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError, match=None) as info:
        Settings.from_file(p).sim_config()
    assert msg in str(info.value)


def test_override_syntax_errors():
    s = Settings()
    with pytest.raises(ConfigError):
        s.apply_overrides(["gridn=3"])
    with pytest.raises(ConfigError):
        s.apply_overrides(["grid.zzz=3"])


def test_empty_config_exit_2(tmp_path, capsys):
    p = tmp_path / "e.ini"
    p.write_text("")
    assert cli.main(["simulate", "--config", str(p)]) == 2
    assert "empty" in capsys.readouterr().err


def test_missing_config_is_usage_error():
    with pytest.raises(SystemExit) as info:
        cli.main(["simulate"])
    assert info.value.code == 2


def test_simulate_outputs_and_determinism(tmp_path, sim_ini):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--config", str(sim_ini), "--out", str(out1)]) == 0
    assert cli.main(["simulate", "--config", str(sim_ini), "--out", str(out2)]) == 0
    summary = read_summary(out1)
    assert summary["schema"] == SCHEMA and summary["passed"]
    assert summary["summary"]["mass_drift_rel"] <= 1e-8
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["config"]["grid"]["n"] == "24"
    for name in manifest["files"]:
        if name.endswith(".csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_flags_override_config(tmp_path, sim_ini):
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(sim_ini), "--out", str(out), "--n", "12",
                     "--N", "3", "--T", "0.02"]) == 0
    s = read_summary(out)["summary"]
    assert (s["n"], s["N"], s["T"]) == (12, 3, 0.02)


def test_homogeneous_and_moments(tmp_path, sim_ini):
    out = tmp_path / "h"
    assert cli.main(["homogeneous", "--config", str(sim_ini), "--out", str(out)]) == 0
    assert read_summary(out)["summary"]["N"] == 1
    out = tmp_path / "m"
    assert cli.main(["moments", "--config", str(sim_ini), "--out", str(out), "--tail-index", "3"]) == 0
    for name in ("rho1_tail.csv", "M1.csv", "psi.csv"):
        assert (out / name).exists()
    s = read_summary(out)
    assert s["summary"]["tail_index"] == 3


def test_failed_check_exit_1(tmp_path, sim_ini):
    out = tmp_path / "f"
    rc = cli.main(["simulate", "--config", str(sim_ini), "--out", str(out),
                   "--set", "checks.mass_drift_tol=-1"])
    assert rc == 1
    assert not read_summary(out)["passed"]


def test_solver_abort_exit_3_with_partial(tmp_path, sim_ini, monkeypatch):
    def boom(cfg, state=None):
        rec = TrajectoryRecord(cfg)
        rec.times, rec.mass, rec.tail_mass = [0.0], [1.0], [0.0]
        rec.species_sup = np.ones(cfg.n)
        rec.moment_frames = {k: [np.ones(cfg.N)] for k in (0, 1, 2)}
        rec.states, rec.state_times = [np.ones((cfg.n, cfg.N))], [0.0]
        raise SolverAbort("forced", partial=rec)

    monkeypatch.setattr(cli, "run", boom)
    out = tmp_path / "ab"
    assert cli.main(["simulate", "--config", str(sim_ini), "--out", str(out)]) == 3
    s = read_summary(out)
    assert "forced" in s["summary"]["error"]
    assert (out / "mass.csv").exists()


def test_real_abort_exit_3(tmp_path):
    p = tmp_path / "a.ini"
    p.write_text("[kernel]\nfamily = multiplicative\n[grid]\nn = 64\nN = 1\n"
                 "[time]\nT = 2\ndt = 0.5\nstability_cap = 1e9\nmax_halvings = 0\n"
                 "[initial]\nmass = 20\namplitude = 0\n")
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(p), "--out", str(out)]) == 3
    assert read_summary(out)["summary"]["completed"] is False


def test_duality_k_json(capsys):
    assert cli.main(["duality-k", "--m", "1", "--q", "2", "--nx", "8", "--nt", "8",
                     "--samples", "10"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["schema"] == SCHEMA
    assert 1 - 1e-6 <= out["k_estimate"] <= 1 + 1e-14


def test_closeness_json(capsys):
    assert cli.main(["closeness", "--a", "1", "--b", "3", "--p", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lhs"] == 0.5 and out["rigorous"]
    assert cli.main(["closeness", "--a", "3", "--b", "1", "--p", "2"]) == 2


def test_dual_solve(tmp_path):
    out = tmp_path / "d"
    assert cli.main(["dual-solve", "--nx", "16", "--nt", "16", "--out", str(out)]) == 0
    s = read_summary(out)
    assert s["summary"]["zero"]["observed_ratio"] <= 0.25
    assert (out / "u.csv").exists()
    assert cli.main(["dual-solve", "--nx", "8", "--nt", "8", "--a", "0.05", "--b", "1.95",
                     "--max-iter", "5", "--out", str(out)]) == 3
    assert cli.main(["dual-solve", "--pattern", "stripes", "--out", str(out)]) == 2


def test_weakform_and_gelation_commands(tmp_path):
    out = tmp_path / "w"
    assert cli.main(["weakform-test", "--trials", "3", "--ns", "4,16", "--out", str(out)]) == 0
    assert read_summary(out)["passed"]
    assert cli.main(["weakform-test", "--ns", "x", "--out", str(out)]) == 2
    out = tmp_path / "g"
    rc = cli.main(["gelation-scan", "--ns", "50,100,200", "--T", "1", "--out", str(out)])
    assert rc in (0, 1)
    assert (out / "gelation.csv").read_text().startswith("n,retained_mass")


def test_experiment_e2(tmp_path):
    out = tmp_path / "e2"
    assert cli.main(["experiment", "E2", "--out", str(out)]) == 0
    s = read_summary(out)
    assert s["experiment"] == "E2"
    assert s["summary"]["constant"]["abs_error"] <= 1e-4


def test_experiment_e1_lighter_override(tmp_path):
    out = tmp_path / "e1"
    assert cli.main(["experiment", "E1", "--out", str(out), "--set", "time.T=0.05"]) == 0
    assert read_summary(out)["summary"]["mass_drift_rel"] <= 1e-8


def test_experiment_rejects_unknown_name():
    with pytest.raises(SystemExit) as info:
        cli.main(["experiment", "E9"])
    assert info.value.code == 2


def test_initial_family_keeps_default_shape_parameters():
    s = Settings("[initial]\nfamily = monodisperse\nmass = 2\n")
    init = s.initial()
    assert init.mass == 2.0
    assert init.amplitude == 0.5 and init.ratio == 0.5
