"""Command-line interface: exit codes, output files and determinism."""

import json
import xml.etree.ElementTree as ET

import pytest
from click.testing import CliRunner

from shrinkstack import __version__
from shrinkstack.cli import RunConfig, ConfigError, main


@pytest.fixture
def runner():
    return CliRunner()


def _cfg(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(kw))
    return str(path)


def test_version(runner):
    res = runner.invoke(main, ["--version"])
    assert res.exit_code == 0 and __version__ in res.output


def test_roots_json(runner, tmp_path):
    res = runner.invoke(main, ["roots", "--json", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    doc = json.loads(res.output)
    assert doc["command"] == "roots" and doc["passed"]
    assert abs(doc["roots"]["r_mu"] - 1.52) < 0.01
    assert json.loads((tmp_path / "roots.json").read_text()) == doc


def test_roots_text(runner):
    res = runner.invoke(main, ["roots"])
    assert res.exit_code == 0
    assert res.output.count("PASS") == 4


@pytest.mark.parametrize(
    "bad",
    [{"m": 1}, {"two_J": 0}, {"alpha": 0.5}, {"tol": -1.0}, {"resolution": 12}, {"N_modes": 4}, {"seed_pv": [1.0]}],
)
def test_invalid_config_exit_2(runner, tmp_path, bad):
    res = runner.invoke(main, ["balance", "--config", _cfg(tmp_path, **bad), "--out", str(tmp_path)])
    assert res.exit_code == 2


def test_unknown_key_exit_2(runner, tmp_path):
    res = runner.invoke(main, ["roots", "--config", _cfg(tmp_path, colour="red")])
    assert res.exit_code == 2
    assert "unknown config keys" in res.output


def test_unreadable_config_exit_2(runner, tmp_path):
    res = runner.invoke(main, ["roots", "--config", str(tmp_path / "missing.json")])
    assert res.exit_code == 2


def test_config_overrides():
    cfg = RunConfig.load(None, two_J=3, m=None)
    assert cfg.two_J == 3 and cfg.m == RunConfig().m
    with pytest.raises(ConfigError):
        RunConfig.load(None, m=1)


def test_check_filter_writes_junit(runner, tmp_path):
    res = runner.invoke(main, ["check", "--filter", "specfun", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    root = ET.parse(tmp_path / "check.xml").getroot()
    suites = root.findall("testsuite")
    assert [s.get("name") for s in suites] == ["specfun"]
    assert int(suites[0].get("failures")) == 0
    assert len(suites[0].findall("testcase")) == 4
    doc = json.loads((tmp_path / "check.json").read_text())
    assert doc["passed"] and doc["config"]["m"] == RunConfig().m


def test_check_bad_filter(runner, tmp_path):
    res = runner.invoke(main, ["check", "--filter", "nope", "--out", str(tmp_path)])
    assert res.exit_code == 2


def test_balance_writes_result(runner, tmp_path):
    res = runner.invoke(main, ["balance", "--two-J", "1", "--m", "64", "--json", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "balance.json").read_text())
    assert doc["converged"] and doc["residual"] < 1e-6
    assert doc["config"]["two_J"] == 1 and doc["config"]["m"] == 64
    assert len(doc["pv_array"]) == 2


def test_balance_nonconvergence_exit_1(runner, tmp_path):
    cfg = _cfg(tmp_path, two_J=2, m=64, max_iter=1, tol=1e-14)
    res = runner.invoke(main, ["balance", "--config", cfg, "--out", str(tmp_path)])
    assert res.exit_code == 1
    doc = json.loads((tmp_path / "balance.json").read_text())
    assert not doc["converged"] and doc["residual_history"]


@pytest.mark.slow
def test_surface_deterministic(runner, tmp_path):
    args = ["surface", "--two-J", "1", "--m", "6", "--resolution", "16", "--no-residual"]
    plys = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        res = runner.invoke(main, args + ["--out", str(out)])
        assert res.exit_code == 0, res.output
        plys.append((out / "surface.ply").read_bytes())
        topo = json.loads((out / "topology.json").read_text())["topology"]
        assert topo["passed"] and topo["genus"] == 5
        assert topo["vertices"] == topo["expected_vertices"]
        csv_lines = (out / "cone_slopes.csv").read_text().splitlines()
        assert csv_lines[0].startswith("# config ")
        assert csv_lines[1] == "j,closed,numeric,rel_diff,flag"
    assert plys[0] == plys[1]


@pytest.mark.slow
def test_surface_reuses_balance(runner, tmp_path):
    assert runner.invoke(main, ["balance", "--two-J", "1", "--m", "6", "--out", str(tmp_path)]).exit_code == 0
    res = runner.invoke(main, ["-v", "surface", "--two-J", "1", "--m", "6", "--no-residual", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert (tmp_path / "surface.obj").exists()
