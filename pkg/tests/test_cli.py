import csv

import pytest

from logcap.cli import main
from logcap.config import ConfigError, ExperimentConfig, parse_config


def _run(tmp_path, command, body, *extra):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("[experiment]\n" + body)
    out = tmp_path / "out"
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _report(out):
    return (out / "report.txt").read_text()


def test_config_defaults_roundtrip():
    cfg = parse_config("", {"command": "sweep"})
    assert cfg.lam == 1.0 and cfg.m_grid == [64, 256, 1024]
    again = parse_config(cfg.to_ini())
    assert again == cfg


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ConfigError) as err:
        parse_config("[experiment]\nbogus = 1\n")
    assert err.value.field == "bogus"
    with pytest.raises(ConfigError) as err:
        parse_config("[experiment]\nalpha = -1\n")
    assert err.value.field == "alpha"
    with pytest.raises(ConfigError):
        parse_config("[other]\nalpha = 1\n")
    assert isinstance(ExperimentConfig(), ExperimentConfig)


def test_capacity_command(tmp_path):
    code, out = _run(tmp_path, "capacity", "intervals = 0:1\npanels = 100, 200, 400\n")
    assert code == 0
    rows = _rows(out / "capacity.csv")
    assert rows[0][:3] == ["panels", "energy", "capacity"]
    assert abs(float(rows[-1][2]) - 0.25) < 1e-4
    assert (out / "profile.csv").exists()
    text = _report(out)
    assert text.startswith("status = complete")
    assert "extrapolated_capacity" in text
    assert (out / "resolved_config.ini").exists()


def test_audit_command(tmp_path):
    code, out = _run(tmp_path, "audit", "n = 64\nq = 2\n")
    assert code == 0
    assert "[verdicts]" in _report(out)
    assert len(_rows(out / "a2_averages.csv")) == 1 + 5 * 9


def test_montecarlo_command(tmp_path):
    code, out = _run(tmp_path, "montecarlo", "n = 8\nq = 1\ntrials = 20\n")
    assert code == 0
    assert _rows(out / "gap_tail.csv")[1][1] == "20"
    assert (out / "fourth_moment.csv").exists()
    assert (out / "conditional_means.csv").exists()


def test_redistribute_command(tmp_path):
    code, out = _run(tmp_path, "redistribute", "lambda = 0.25\nq = 4\neps_step = 0.8\n")
    assert code == 0
    rows = _rows(out / "stages.csv")
    assert rows[0][0] == "stage" and len(rows) == 2
    assert float(rows[1][6]) < 0.8


def test_sweep_replay_identical(tmp_path):
    body = "alphas = 1.0, 2.0\nm_grid = 64\nlambda = 0.25\nq = 2\n"
    code, out = _run(tmp_path, "sweep", body)
    assert code == 0
    first = (out / "sweep.csv").read_text()
    replay = tmp_path / "replay"
    code = main(["sweep", "--config", str(out / "resolved_config.ini"), "--out", str(replay)])
    assert code == 0
    assert (replay / "sweep.csv").read_text() == first


def test_seed_override(tmp_path):
    code, out = _run(tmp_path, "sweep", "alphas = 1.0\nm_grid = 64\nlambda = 0.25\nq = 2\n", "--seed", "5")
    assert code == 0
    assert "seed = 5" in (out / "resolved_config.ini").read_text()


def test_config_error_exit_code(tmp_path):
    code, out = _run(tmp_path, "capacity", "alpha = 0\n")
    assert code == 2
    assert "field = alpha" in (out / "error.txt").read_text()


def test_runtime_error_marks_report_incomplete(tmp_path):
    # the budget cannot be met before the index budget runs out
    code, out = _run(tmp_path, "redistribute", "lambda = 1\nq = 1\neps_step = 0.001\nm_min = 1048576\n")
    assert code == 1
    assert _report(out).startswith("status = incomplete")
    assert "LevelExhaustionError" in (out / "error.txt").read_text()


def test_selftest_subset(tmp_path, capsys):
    code, out = _run(tmp_path, "selftest", "criteria = 1, 3\n")
    assert code == 0
    printed = capsys.readouterr().out
    assert printed.splitlines()[0].startswith("[PASS]  1 ")
    assert len(_rows(out / "selftest.csv")) == 3
