import csv
import json
import subprocess
import sys

import pytest

from bisobolev.cli import ExperimentConfig, main, read_config_file
from bisobolev.errors import ConfigError


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_tile_summary(capsys):
    code, out, err = run(capsys, "tile", "--domain", "unit-square", "--r", "0.1")
    assert code == 0
    assert out.strip() == "49 squares, uncovered 0.51"


def test_tile_empty_is_exit_3(capsys, tmp_path):
    code, out, err = run(capsys, "tile", "--r", "0.5", "--out-dir", str(tmp_path))
    assert code == 3
    assert json.loads(err)["exit_status"] == 3


def test_tile_svg(capsys, tmp_path):
    svg = tmp_path / "t.svg"
    code, _, _ = run(capsys, "tile", "--r", "1/8", "--svg", str(svg))
    assert code == 0 and svg.read_text().startswith("<?xml")


@pytest.mark.parametrize("argv,status,errcode", [
    (["approx", "--map", "spiral"], 15, "unknown_map"),
    (["approx", "--map", "fold"], 19, "non_injective_oracle"),
    (["tile", "--r", "-1"], 2, "config_error"),
    (["tile", "--bogus"], 2, "config_error"),
    (["frobnicate"], 2, "config_error"),
])
def test_errors_are_json(capsys, tmp_path, argv, status, errcode):
    code, out, err = run(capsys, *argv, *(["--out-dir", str(tmp_path)] if argv[0] != "frobnicate" else []))
    assert code == status
    payload = json.loads(err)
    assert payload["exit_status"] == status and payload["code"] == errcode


def test_config_file_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "c.txt"
    cfg_file.write_text("# comment\nmap = shear:s=0.3\nr = 1/16  # trailing\nr-schedule = 1/8, 1/16\n")
    raw = read_config_file(cfg_file)
    cfg = ExperimentConfig()
    cfg.update(raw)
    cfg.update({"r": "0.25", "map": None})
    cfg.validate()
    assert cfg.map == "shear:s=0.3" and cfg.r == 0.25 and cfg.r_schedule == (0.125, 0.0625)
    (tmp_path / "bad.txt").write_text("nonsense\n")
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "bad.txt")
    with pytest.raises(ConfigError):
        ExperimentConfig().update({"colour": "red"})


def test_approx_outputs(capsys, tmp_path):
    code, _, _ = run(capsys, "approx", "--map", "shear:s=0.4", "--r", "1/8", "--out-dir", str(tmp_path))
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["report"]["valid"] and rep["eta_met"]
    assert rep["report"]["total_eta"] <= 1e-9
    for name in ("config.txt", "approximant.txt", "inverse.txt", "mesh_before.svg", "mesh_after.svg"):
        assert (tmp_path / name).exists()


def test_approx_eta_not_met(capsys, tmp_path):
    code, _, err = run(capsys, "approx", "--map", "sine_warp:a=0.1", "--r", "1/8", "--eta", "1e-6",
                       "--out-dir", str(tmp_path))
    assert code == 4 and json.loads(err)["code"] == "eta_not_met"
    assert (tmp_path / "report.json").exists()


def test_verify_identity_all_true(capsys, tmp_path):
    code, _, _ = run(capsys, "verify", "--map", "identity", "--r", "1/8", "--out-dir", str(tmp_path))
    assert code == 0
    with open(tmp_path / "checks.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and {r["satisfied"] for r in rows} == {"true"}
    assert list(rows[0]) == ["check_name", "map", "r", "lhs", "rhs", "uncertainty", "satisfied"]


def test_convergence_deterministic_and_thread_independent(capsys, tmp_path):
    args = ["convergence", "--map", "sine_warp:a=0.1", "--r-schedule", "1/8,1/16", "--seed", "7"]
    assert run(capsys, *args, "--threads", "1", "--out-dir", str(tmp_path / "a"))[0] == 0
    assert run(capsys, *args, "--threads", "1", "--out-dir", str(tmp_path / "b"))[0] == 0
    assert run(capsys, *args, "--threads", "4", "--out-dir", str(tmp_path / "c"))[0] == 0
    a, b, c = (tree(tmp_path / k) for k in "abc")
    assert a == b
    # thread count is not part of the result, only of the recorded config
    assert {k: v for k, v in a.items() if k != "config.txt"} == {k: v for k, v in c.items() if k != "config.txt"}
    with open(tmp_path / "a" / "convergence.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["r"]) for r in rows] == [0.125, 0.0625]


def test_module_entry_point(tmp_path):
    p = subprocess.run([sys.executable, "-m", "bisobolev", "tile", "--r", "0.1"], capture_output=True, text=True)
    assert p.returncode == 0 and p.stdout.strip() == "49 squares, uncovered 0.51"
