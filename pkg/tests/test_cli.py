import json

import pytest

from ksblowup.cli import EXIT_INVALID, EXIT_OK, main


def test_dry_run_prints_plan(capsys, tmp_path):
    assert main(["verify", "--dry-run", "--output", str(tmp_path), "--k", "1", "--l", "1"]) == EXIT_OK
    plan = json.loads(capsys.readouterr().out)
    assert plan["command"] == "verify" and plan["m"] == 3
    assert not any(tmp_path.iterdir())


@pytest.mark.parametrize("argv", [
    ["green", "--beta", "-1"],
    ["critpoints", "--k", "0", "--l", "0"],
    ["verify", "--p", "1.5"],
    ["construct", "--weight", "sqrt(x1)"],
])
def test_invalid_input_exits_with_two(argv, tmp_path, capsys):
    assert main(argv + ["--output", str(tmp_path), "--dry-run"]) == EXIT_INVALID
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["green", "--config", str(tmp_path / "nope.json")]) == EXIT_INVALID


def test_config_file_with_overrides(tmp_path, capsys):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"domain": {"shape": "rectangle"}, "k": 1, "interior": [[0.5, 0.5]]}))
    assert main(["verify", "--config", str(path), "--epsilons", "0.08,0.04,0.06", "--dry-run"]) == EXIT_OK
    plan = json.loads(capsys.readouterr().out)
    assert plan["domain"] == "rectangle"
    assert plan["epsilons"] == [0.08, 0.06, 0.04]


def test_green_command_writes_tables(tmp_path, capsys):
    out = tmp_path / "green"
    argv = ["green", "--output", str(out), "--target-h", "0.1", "--resolution", "8", "--heatmap"]
    assert main(argv) == EXIT_OK
    res = json.loads(capsys.readouterr().out)
    assert len(res["robin"]) == 1
    for name in ("robin.csv", "mesh.txt", "H_0.csv", "green.svg"):
        assert (out / name).stat().st_size > 0
    assert (out / "green.svg").read_text().startswith("<svg")
