import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cli_fixtures import write_quadratic_case
from statecal import __version__, io
from statecal.cli import EXIT_CODES, SEED_ENV, dispatch, resolve_seed
from statecal.config import parse_config
from statecal.experiments import vpsc_example_path


def run(*argv):
    return dispatch([str(a) for a in argv])


def summary(out):
    return json.loads((out / "summary.json").read_text())


def snapshot(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture
def case(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    path, _ = write_quadratic_case(tmp_path, predict={"grid": [0.1, 0.45, 0.9]},
                                   diagnose={"n_rep": 50})
    return path


def test_version(capsys):
    assert run("version") == 0
    assert capsys.readouterr().out.strip() == f"statecal {__version__}"


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["calibrate", "--seed", "-1"],
                                  ["calibrate", "--chains", "0"], ["predict", "--bogus"]])
def test_usage_errors(argv, capsys):
    assert dispatch(argv) == EXIT_CODES["usage"] == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("error: usage: ")


def test_calibrate_needs_config(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("calibrate", "--out", out, "--quiet") == 2
    assert summary(out)["status"] == "error" and summary(out)["category"] == "usage"


def test_predict_without_traces(case, tmp_path, capsys):
    out = tmp_path / "empty"
    assert run("predict", "--config", case, "--out", out, "--quiet") == EXIT_CODES["traces"]
    assert "traces not found" in capsys.readouterr().err
    s = summary(out)
    assert s["status"] == "error" and s["exit_code"] == 3 and s["category"] == "traces"


def test_vpsc_without_simulator(tmp_path, capsys):
    out = tmp_path / "v"
    code = run("calibrate", "--config", vpsc_example_path(), "--out", out, "--quiet")
    assert code == EXIT_CODES["simulator"] == 4
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: simulator: ") and "simulator required" in err
    assert summary(out)["exit_code"] == 4


def test_bad_config_is_a_config_error(tmp_path, capsys):
    path, cfg = write_quadratic_case(tmp_path)
    cfg["chains"]["burnin"] = 1
    path.write_text(json.dumps(cfg))
    assert run("calibrate", "--config", path, "--out", tmp_path / "o", "--quiet") == 2
    assert "error: config: chains.burnin" in capsys.readouterr().err


def test_full_pipeline_and_exit_parity(case, tmp_path):
    out = tmp_path / "run"
    assert run("calibrate", "--config", case, "--out", out, "--quiet") == 0
    s = summary(out)
    assert s["status"] == "ok" and s["exit_code"] == 0 and s["seed"] == 5
    assert set(s["outputs"]) == {"chain_0.csv", "chain_1.csv", "traces_meta.json"}
    assert run("predict", "--config", case, "--out", out, "--quiet") == 0
    assert summary(out)["status"] == "ok"
    pred = io.read_columns(out / "predictions.csv")
    np.testing.assert_array_equal(pred["x"], [0.1, 0.45, 0.9])
    assert np.all(pred["lower95"] <= pred["upper95"])
    assert run("diagnose", "--config", case, "--out", out, "--quiet") == 0
    rep = json.loads((out / "check_report.json").read_text())
    assert rep["n_rep"] == 50 and len(rep["p_values"]) == 3


def test_outputs_stay_inside_out(case, tmp_path):
    before = {p for p in tmp_path.rglob("*")}
    out = tmp_path / "only_here"
    assert run("calibrate", "--config", case, "--out", out, "--quiet") == 0
    assert run("predict", "--config", case, "--out", out, "--quiet") == 0
    new = {p for p in tmp_path.rglob("*")} - before
    assert new and all(p == out or out in p.parents for p in new)


def test_calibrate_and_predict_are_byte_deterministic(case, tmp_path):
    snaps = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("calibrate", "--config", case, "--out", out, "--quiet") == 0
        assert run("predict", "--config", case, "--out", out, "--quiet") == 0
        snaps.append(snapshot(out))
    assert snaps[0] == snaps[1]


def test_seed_precedence(case, tmp_path, monkeypatch):
    def seed_used(*extra):
        out = tmp_path / f"s{len(list(tmp_path.iterdir()))}"
        assert run("calibrate", "--config", case, "--out", out, "--quiet", "--chains", 1, *extra) == 0
        return summary(out)["seed"]

    assert seed_used() == 5
    monkeypatch.setenv(SEED_ENV, "77")
    assert seed_used() == 77
    assert seed_used("--seed", 0x10) == 16
    monkeypatch.setenv(SEED_ENV, "seven")
    assert run("calibrate", "--config", case, "--out", tmp_path / "x", "--quiet") == 2


def test_resolve_seed_unit(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    assert resolve_seed(None, 3) == 3
    monkeypatch.setenv(SEED_ENV, "")
    assert resolve_seed(None, 3) == 3
    monkeypatch.setenv(SEED_ENV, "9")
    assert resolve_seed(None, 3) == 9 and resolve_seed(1, 3) == 1


def test_trace_files_round_trip(case, tmp_path):
    out = tmp_path / "rt"
    assert run("calibrate", "--config", case, "--out", out, "--quiet") == 0
    problem = parse_config(case).problem()
    ts = io.read_traces(out, problem)
    io.write_traces(ts, tmp_path / "again")
    for name in ("chain_0.csv", "chain_1.csv"):
        assert (out / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_write_columns_exact_round_trip(tmp_path):
    v = np.random.default_rng(1).standard_normal(200) * 10.0 ** np.arange(-100, 100)
    io.write_columns(tmp_path / "c.csv", {"v": v, "i": np.arange(200)})
    back = io.read_columns(tmp_path / "c.csv")
    assert back["v"].tobytes() == v.tobytes()


def test_module_entry_point(tmp_path):
    env = dict(os.environ)
    env.pop(SEED_ENV, None)
    r = subprocess.run([sys.executable, "-m", "statecal", "version"], capture_output=True, text=True,
                       env=env, cwd=tmp_path)
    assert r.returncode == 0 and r.stdout.strip() == f"statecal {__version__}"


def test_runtime_failure_exit_code(case, tmp_path, monkeypatch, capsys):
    import statecal.cli as cli

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_chains", boom)
    out = tmp_path / "f"
    assert run("calibrate", "--config", case, "--out", out, "--quiet") == 1
    assert capsys.readouterr().err.strip() == "error: runtime: disk on fire"
    assert summary(out)["status"] == "error"


def test_simstudy_twice_is_byte_identical(tmp_path):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"chains": {"n_burn": 60, "n_post": 40, "n_chains": 2,
                                          "adapt_interval": 20}}))
    for name in ("run1", "run2"):
        assert run("simstudy", "--config", cfg, "--seed", 42, "--out", tmp_path / name, "--quiet") == 0
    a, b = snapshot(tmp_path / "run1"), snapshot(tmp_path / "run2")
    timing = [k for k in a if k.name == "timing.json"]
    assert timing, "timing is written separately from the summary"
    for k in timing:
        a.pop(k), b.pop(k)
    assert a == b
    s = summary(tmp_path / "run1")
    assert s["seed"] == 42 and set(s["table1_rmspe"]) >= {"parametric", "constant"}
