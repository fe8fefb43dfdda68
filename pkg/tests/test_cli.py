import subprocess
import sys

import pytest
from hypothesis import given, settings, strategies as st

import capmound.cli as cli
from capmound import __version__
from capmound.cli import ConfigError, RunConfig, config_echo, config_from_summary, main, parse_config
from capmound.similarity import ShootingError


def summary(path):
    out = {}
    for line in (path / "summary.txt").read_text().splitlines():
        k, v = line.split(" = ", 1)
        out[k] = v
    return out


def test_minimal_eigen_config():
    cfg = parse_config("problem=eigen ratio=1.0")
    assert cfg == RunConfig(problem="eigen", ratio=1.0, kappa1=1.0, porosity=1.0, eps_tip=1e-6, step=1e-3)


def test_config_file_layout():
    cfg = parse_config("# dipole run\nproblem = dipole\nratio=0.5 grid_n=100  # coarse\n\nsnapshots = 1,2\n")
    assert cfg.ratio == 0.5 and cfg.grid_n == 100 and cfg.snapshots == (1.0, 2.0)
    assert cfg.t_start == 0.1 and cfg.t_end == 100.0


@pytest.mark.parametrize("text,where", [
    ("problem=eigen ratio=1.5", "ratio"),
    ("problem=eigen colour=red", "colour"),
    ("problem=eigen ratio=abc", "ratio"),
    ("problem=eigen\nratio=0.5\nratio=0.6", "given twice"),
    ("problem=eigen cfl=0.2", "cfl"),
    ("problem=dipole delta=0.3 ratio=0.5", "ratio"),
    ("problem=dipole grid_n=10.5", "grid_n"),
    ("problem=drainage left=constant", "flux"),
    ("problem=validate-similarity ratio=0.5", "ratio"),
    ("problem=quench", "problem"),
    ("ratio=0.5", "problem"),
    ("problem=dipole t_end=inf", "t_end"),
])
def test_config_rejections(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_config(text)


def test_line_numbers_in_diagnostics():
    with pytest.raises(ConfigError, match="<config>:3"):
        parse_config("problem=eigen\n\nbogus=1\n")


def test_delta_resolves_to_ratio():
    cfg = parse_config("problem=dipole delta=0.25")
    assert cfg.ratio == 0.75 and cfg.delta is None


def test_flood_drain_alias():
    assert parse_config("problem=flood-drain").problem == "flood-then-drain"


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.2, 500.0),
       st.lists(st.floats(0.1, 0.2), max_size=3))
@settings(max_examples=50)
def test_echo_round_trip(ratio, cfl, t_end, snaps):
    cfg = RunConfig(problem="dipole", ratio=ratio, cfl=cfl, t_end=t_end, snapshots=tuple(snaps)).resolve()
    text = "\n".join(config_echo(cfg))
    assert config_from_summary(text) == cfg


def run_cli(args, capsys=None):
    code = main([str(a) for a in args])
    err = capsys.readouterr().err if capsys else ""
    return code, err


def test_eigen_cli(tmp_path, capsys):
    code, _ = run_cli(["eigen", "--ratio", "1.0", "--out", tmp_path], capsys)
    assert code == 0
    s = summary(tmp_path)
    assert abs(float(s["beta"]) - 0.25) <= 5e-4
    assert s["tool_version"] == __version__
    assert (tmp_path / "profile.csv").read_text().startswith("xi,f\n")
    assert config_from_summary((tmp_path / "summary.txt").read_text()) == parse_config("problem=eigen ratio=1.0")


def test_config_error_exit(tmp_path, capsys):
    code, err = run_cli(["eigen", "--ratio", "1.5", "--out", tmp_path], capsys)
    assert code == 2
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("capmound-error config: ratio")


def test_argparse_error_exit(capsys):
    with pytest.raises(SystemExit) as e:
        main(["dipole"])
    assert e.value.code == 2
    assert capsys.readouterr().err.startswith("capmound-error config:")


def test_instability_exit(tmp_path, capsys):
    args = ["drainage", "--set", "left=free", "--set", "domain_right=2", "--set", "offset=0.5",
            "--t-end", "50", "--grid-n", "40", "--out", tmp_path]
    code, err = run_cli(args, capsys)
    assert code == 3
    assert err.startswith("capmound-error instability:") and err.count("\n") == 1


def test_convergence_exit(tmp_path, capsys, monkeypatch):
    def fail(*a, **k):
        raise ShootingError("no sign change")
    monkeypatch.setattr(cli, "shoot_beta", fail)
    code, err = run_cli(["eigen", "--out", tmp_path], capsys)
    assert code == 4 and err.startswith("capmound-error convergence: no sign change")


def test_flags_override_config(tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text("problem=dipole\nratio=0.5\ngrid_n=40\nt_end=2\n")
    code, _ = run_cli(["dipole", "--config", conf, "--ratio", "0.7", "--out", tmp_path / "o"], capsys)
    assert code == 0
    s = summary(tmp_path / "o")
    assert s["config.ratio"] == "0.7" and s["config.grid_n"] == "40"


def test_config_problem_must_match(tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text("problem=eigen\n")
    code, err = run_cli(["dipole", "--config", conf, "--out", tmp_path / "o"], capsys)
    assert code == 2 and "does not match" in err


def test_missing_config_file(tmp_path, capsys):
    code, _ = run_cli(["dipole", "--config", tmp_path / "nope.cfg", "--out", tmp_path / "o"], capsys)
    assert code == 2


DIPOLE = ["dipole", "--ratio", "0.5", "--grid-n", "40", "--t-end", "5", "--snapshots", "1,5"]


def test_dipole_outputs_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(DIPOLE + ["--out", a], capsys)[0] == 0
    assert run_cli(DIPOLE + ["--out", b], capsys)[0] == 0
    for name in ("series.csv", "snapshots.csv", "summary.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    lines = (a / "series.csv").read_text().splitlines()
    assert lines[0] == "time,x_left,x_right,max_height,mass,dipole_moment,left_flux"
    assert len(lines) == 201
    snaps = (a / "snapshots.csv").read_text().splitlines()
    assert snaps[0] == "snapshot_time,x,h"
    assert {ln.split(",")[0] for ln in snaps[1:]} == {"1.0", "5.0"}
    s = summary(a)
    for key in ("beta_fit", "alpha_fit", "alpha_plus_2beta_fit", "beta_eigen", "collapse_metric"):
        assert key in s
    # echo re-parses to the config that produced the run
    echoed = config_from_summary((a / "summary.txt").read_text())
    assert echoed == parse_config("problem=dipole ratio=0.5 grid_n=40 t_end=5 snapshots=1,5")


def test_physical_flux_is_normalized(tmp_path, capsys):
    args = ["drainage", "--flux", "0.3", "--kappa1", "2", "--set", "porosity=0.25",
            "--set", "flux_units=physical", "--grid-n", "100", "--t-end", "0.2", "--out", tmp_path]
    assert run_cli(args, capsys)[0] == 0
    # q0 / (m kappa1)
    assert float(summary(tmp_path)["normalized_flux"]) == pytest.approx(0.3 / (0.25 * 2.0))


def test_flood_drain_cli(tmp_path, capsys):
    code, _ = run_cli(["flood-drain", "--flux", "2", "--grid-n", "200", "--out", tmp_path], capsys)
    assert code == 0
    s = summary(tmp_path)
    assert 1.0 < float(s["extinction_time"]) < 20.0
    assert s["mass_nonincreasing_after_switch"] == "true"


def test_validate_similarity_cli(tmp_path, capsys):
    code, _ = run_cli(["validate-similarity", "--beta", "0.2", "--grid-n", "50", "--t-end", "3", "--out", tmp_path], capsys)
    assert code == 0
    s = summary(tmp_path)
    assert float(s["lambda"]) == pytest.approx(0.30673, abs=1e-4)
    assert float(s["sup_h_rel_err"]) < 0.05
    assert s["config.domain_right"] == "2.0"


def test_sweep_cli(tmp_path, capsys):
    code, _ = run_cli(["sweep", "--set", "ratios=1.0,0.5", "--grid-n", "40", "--t-end", "5",
                       "--set", "workers=2", "--out", tmp_path], capsys)
    assert code == 0
    s = summary(tmp_path)
    assert s["row_1"].startswith("ratio=1.0 beta_eigen=")
    assert s["row_2"].startswith("ratio=0.5 ")
    assert "row_3" not in s
    for sub in ("ratio_1.0", "ratio_0.5"):
        assert (tmp_path / sub / "series.csv").exists()


def test_analyze_cli(tmp_path, capsys):
    run = tmp_path / "run"
    assert run_cli(DIPOLE + ["--out", run], capsys)[0] == 0
    assert main(["analyze", str(run)]) == 0
    text = (run / "analysis.txt").read_text()
    assert "x_right_exponent = " in text and "collapse_metric = " in text


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "capmound", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
