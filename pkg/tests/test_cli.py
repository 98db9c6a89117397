import json

import pytest

from hovic.cli import run


def _capture(capsys, argv):
    code = run(argv)
    return code, capsys.readouterr().out


def test_verlet_check_passes(capsys):
    code, out = _capture(capsys, ["verlet-check"])
    assert code == 0
    data = json.loads(out)
    assert data["pass"] is True
    assert data["max_dev"] <= 1e-10


def test_verlet_check_deterministic(capsys):
    _, out1 = _capture(capsys, ["verlet-check", "--seed", "3"])
    _, out2 = _capture(capsys, ["verlet-check", "--seed", "3"])
    assert out1 == out2


def test_coefficients_json(capsys):
    code, out = _capture(capsys, ["coefficients", "--family", "lobatto",
                                  "--stages", "3", "--kind", "sg"])
    assert code == 0
    data = json.loads(out[out.index("{"):])
    assert data["a"][0] == pytest.approx([-3.0, 4.0, -1.0])
    assert data["alpha"] == pytest.approx([1.0, 0.0, 0.0])


def test_order_study_slope(capsys):
    code, out = _capture(capsys, ["order-study", "--model", "harmonic",
                                  "--scheme", "sprk", "--family", "gauss",
                                  "--stages", "2"])
    assert code == 0
    summary = json.loads(out[out.index("{"):])
    assert abs(summary["slope"] - 4.0) < 0.3


def test_order_study_unknown_model(capsys):
    code, _ = _capture(capsys, ["order-study", "--model", "nope",
                                "--scheme", "sprk", "--family", "gauss",
                                "--stages", "2"])
    assert code == 1


def test_hager_experiment_files(tmp_path, capsys):
    out = tmp_path / "hager.csv"
    code = run(["--out", str(out), "hager-experiment", "--variant", "c3t3",
                "--N-list", "4,8,16"])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "N,q_error,u_error,status"
    assert len(lines) == 4
    summary = json.loads((tmp_path / "hager.csv.json").read_text())
    assert summary["statuses"] == ["ok"]
    assert summary["q_slope"] > 3.0


def test_hager_experiment_noncoercive_exit_code(capsys):
    code, out = _capture(capsys, ["hager-experiment", "--variant", "c3t1",
                                  "--N-list", "4,8"])
    assert code == 2
    assert "singular" in out


def test_bad_n_list(capsys):
    code, _ = _capture(capsys, ["hager-experiment", "--N-list", "8,4"])
    assert code == 1
    code, _ = _capture(capsys, ["hager-experiment", "--N-list", "8,x"])
    assert code == 1


def test_jobs_flag_output_identical(capsys):
    args = ["hager-experiment", "--variant", "c3t3", "--N-list", "4,8"]
    _, seq = _capture(capsys, args)
    _, par = _capture(capsys, ["--jobs", "2"] + args)
    assert seq == par


def test_solve_ocp_config_and_override(tmp_path, capsys):
    cfg = tmp_path / "ocp.cfg"
    cfg.write_text("model=hager\nN=4\nvariant=c3t3\n# comment\n")
    code, out = _capture(capsys, ["solve-ocp", "--config", str(cfg)])
    assert code == 0
    summary = json.loads(out[out.rindex("{\n"):])
    assert summary["N"] == 4 and summary["status"] == "ok"
    code, out = _capture(capsys, ["solve-ocp", "--config", str(cfg),
                                  "--N", "6"])
    assert json.loads(out[out.rindex("{\n"):])["N"] == 6


def test_solve_ocp_singular_exit(tmp_path, capsys):
    code, _ = _capture(capsys, ["solve-ocp", "--model", "hager", "--N", "4",
                                "--variant", "c2t1"])
    assert code == 2


def test_commutation_check_cli(capsys):
    code, out = _capture(capsys, ["commutation-check", "--N-list", "4,8"])
    assert code == 0
    summary = json.loads(out[out.rindex("{\n"):])
    assert summary["result"] == "PASS"
