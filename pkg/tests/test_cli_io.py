import io
import json
import subprocess
import sys

import numpy as np
import pytest

from thermoporo.cli_io import (
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_OK,
    OUTPUT_DIR_ENV,
    STEP_COLUMNS,
    ConfigError,
    RunConfig,
    main,
    parse_config,
)
from thermoporo.params import ConstraintWarning


def run(argv, tmp_path=None):
    out = io.StringIO()
    if tmp_path is not None:
        argv = [*argv, "-o", str(tmp_path)]
    code = main(argv, out=out)
    return code, out.getvalue()


# -- configuration ---------------------------------------------------------------


def test_defaults():
    cfg = parse_config("")
    assert isinstance(cfg, RunConfig)
    assert cfg.n == 8 and cfg.convection == "picard" and cfg.stress_element == "bdm"
    assert cfg.params.alpha == 0.1
    header = cfg.header()
    assert header.startswith("config ")
    assert json.loads(header[len("config "):])["n"] == 8


def test_full_config():
    text = """
[mesh]
n = 4
[time]
T_f = 0.2   # inline comment
dt = 0.05
[params]
K = 2, 0.1, 1
mu = 2
[solver]
convection = off
stress_element = rt
[pencil]
s = -2
"""
    cfg = parse_config(text)
    assert (cfg.n, cfg.T_f, cfg.dt, cfg.convection, cfg.stress_element) == (4, 0.2, 0.05, "off", "rt")
    np.testing.assert_array_equal(cfg.params.K, [[2, 0.1], [0.1, 1]])
    assert cfg.params.mu == 2.0
    assert cfg.pencil_s == (-2.0,)


def test_overrides_take_precedence():
    cfg = parse_config("[mesh]\nn = 4\n", ["mesh.n=6", "mms.levels=2,4"])
    assert cfg.n == 6 and cfg.mms_levels == (2, 4)
    with pytest.raises(ConfigError, match="section.key=value"):
        parse_config("", ["n=3"])


@pytest.mark.parametrize(
    "text, message",
    [
        ("[mesh]\nn = 0\n", "mesh.n must be at least 1, got 0"),
        ("[mesh]\nn = 2\nn = 3\n", "duplicate key mesh.n"),
        ("[mesh]\nsize = 2\n", "unknown key mesh.size"),
        ("[grid]\nn = 2\n", r"unknown section \[grid\]"),
        ("[time]\ndt = fast\n", "malformed value for time.dt"),
        ("[time]\ndt = -1\n", "time.dt must be positive"),
        ("[solver]\nconvection = newton\n", "solver.convection must be one of"),
        ("[params]\nmu = 0\n", "params: mu must be strictly positive"),
        ("[params]\nK = 1, 2\n", "params.K must be"),
        ("[pencil]\neta = 1\n", "pencil.eta"),
        ("n = 3\n", "malformed configuration"),
    ],
)
def test_config_errors_name_the_key(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_constraint_violation_only_warns():
    with pytest.warns(ConstraintWarning):
        cfg = parse_config("[params]\nalpha = 1\nbeta = 1\nb0 = 0.1\n")
    assert cfg.params.alpha == 1.0


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert parse_config("").output_dir == str(tmp_path / "env")


# -- subcommands -----------------------------------------------------------------


def test_check_params(tmp_path):
    code, out = run(["check-params"])
    assert code == EXIT_OK
    assert out.count(": margin = ") == 3 and "FAIL" not in out
    assert "compliance norm equivalence: pass" in out
    code, out = run(["check-params", "-s", "params.alpha=1", "-s", "params.beta=1", "-s", "params.b0=0.1"])
    assert code == EXIT_FAILURE
    assert "warning:" in out and "constraint 1: margin = -0.4" in out


def test_config_errors_exit_code(tmp_path, capsys):
    assert run(["check-params", "-s", "mesh.n=0"])[0] == EXIT_CONFIG
    assert "mesh.n" in capsys.readouterr().err
    path = tmp_path / "dup.ini"
    path.write_text("[mesh]\nn = 2\nn = 3\n")
    assert run(["run", "-c", str(path)])[0] == EXIT_CONFIG
    assert run(["run", "-c", str(tmp_path / "missing.ini")])[0] == EXIT_CONFIG


def test_pencil_check():
    code, out = run(["pencil-check", "-s", "mesh.n=2", "-s", "pencil.s=-2"])
    assert code == EXIT_OK
    assert out.count("nonsingular") == 1 and "s = -2" in out


def test_run_writes_outputs(tmp_path):
    code, out = run(["run", "-s", "mesh.n=2", "-s", "time.T_f=0.03"], tmp_path)
    assert code == EXIT_OK
    lines = (tmp_path / "steps.csv").read_text().splitlines()
    assert lines[0].startswith("# config ")
    assert lines[1].split(",") == list(STEP_COLUMNS)
    assert len(lines) == 2 + 3
    tri = (tmp_path / "fields_triangles.txt").read_text().splitlines()
    assert len(tri) == 3 + 8
    edges = (tmp_path / "fields_edges.txt").read_text().splitlines()
    assert len(edges) == 3 + 16 and len(edges[3].split()) == 9
    assert "C_contr" in out


def test_run_rt_rows(tmp_path):
    code, _ = run(["run", "-s", "mesh.n=2", "-s", "time.T_f=0.01", "-s", "solver.stress_element=rt"], tmp_path)
    assert code == EXIT_OK
    edges = (tmp_path / "fields_edges.txt").read_text().splitlines()
    assert len(edges[3].split()) == 7


def test_mms(tmp_path):
    code, out = run(["mms", "-s", "mms.levels=4,8", "-s", "mms.T_f=0.1"], tmp_path)
    assert code == EXIT_OK
    lines = (tmp_path / "mms_errors.csv").read_text().splitlines()
    assert lines[0].startswith("# config ") and len(lines) == 4
    assert "etrace" in out


def test_mms_failure_writes_partial_table(tmp_path):
    code, _ = run(["mms", "-s", "mms.levels=2,4", "-s", "solver.max_iters=1", "-s", "solver.tol=1e-15"], tmp_path)
    assert code == EXIT_FAILURE
    assert (tmp_path / "mms_errors.csv").exists()


def test_biot_check():
    code, out = run(["biot-check", "-s", "biot.n=2"])
    assert code == EXIT_OK
    assert "pass" in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "thermoporo", "check-params", "--seed", "3"],
        capture_output=True, text=True, cwd=tmp_path,
    )
    assert proc.returncode == 0
    assert "overall: pass" in proc.stdout
