import numpy as np
import pytest

from whqpctl import cli, verify
from whqpctl.whqp import IterationLimitExceeded, active_search, format_problem

INFEASIBLE = "n 1\nlevel\nweight_blocks 1 1\nW diag 1 1\nrow ge 1 1\nrow le 1 0\n"
EQUALITY = "n 2\nlevel\nrow eq 1 0 1\nrow eq 1 1 3\n"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_solve_infeasible_pair(tmp_path, capsys):
    assert cli.main(["solve", _write(tmp_path, "p.txt", INFEASIBLE)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "x 0.5"
    assert out[2] == "objectives 0.25"


def test_solve_equality_level(tmp_path, capsys):
    assert cli.main(["solve", _write(tmp_path, "p.txt", EQUALITY)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "x 1 2"
    assert abs(float(out[2].split()[1])) < 1e-20


def test_solve_parse_error_exit_code(tmp_path, capsys):
    assert cli.main(["solve", _write(tmp_path, "p.txt", "n 2\nlevel\nrow eq 1 x 1\n")]) == 2
    assert "line 3" in capsys.readouterr().err
    assert cli.main(["solve", str(tmp_path / "missing.txt")]) == 2


def test_solve_solver_error_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise IterationLimitExceeded("stuck")

    monkeypatch.setattr(cli, "active_search", boom)
    assert cli.main(["solve", _write(tmp_path, "p.txt", EQUALITY)]) == 1


def test_solve_matches_library_on_random_instance(tmp_path, capsys):
    h = verify.random_hierarchy(np.random.default_rng(11))
    assert cli.main(["solve", _write(tmp_path, "p.txt", format_problem(h))]) == 0
    xs = [float(v) for v in capsys.readouterr().out.splitlines()[0].split()[1:]]
    np.testing.assert_allclose(xs, active_search(h).x, rtol=1e-11, atol=1e-12)


def test_simulate_single_step(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["simulate", "--case", "equal", "--duration", "0.001", "--out", str(out)]) == 0
    lines = (out / "log.csv").read_text().splitlines()
    assert len(lines) == 2
    summary = (out / "summary.txt").read_text()
    assert "box_violation_max" in summary and "res_inertia_max" in summary


def test_simulate_from_scenario_file(tmp_path):
    scene = _write(tmp_path, "s.yaml", "case: regulate\nduration: 0.01\n")
    out = tmp_path / "run"
    assert cli.main(["simulate", scene, "--dt", "0.002", "--out", str(out)]) == 0
    assert len((out / "log.csv").read_text().splitlines()) == 6


def test_verify_is_deterministic(capsys):
    assert cli.main(["verify", "wmpi", "--seed", "3", "--count", "10"]) == 0
    a = capsys.readouterr().out
    assert cli.main(["verify", "wmpi", "--seed", "3", "--count", "10"]) == 0
    assert capsys.readouterr().out == a
    assert "max residual" in a and "FAIL" not in a


def test_verify_failure_gives_nonzero_exit(monkeypatch):
    def failing(rng, count):
        r = verify.SuiteResult("always fails")
        r.record(1.0, 0.0, "forced")
        return [r]

    monkeypatch.setitem(verify.SUITES, "decomp", (failing,))
    assert cli.main(["verify", "decomp", "--count", "1"]) == 1


def test_verify_unknown_suite():
    with pytest.raises(SystemExit):
        cli.main(["verify", "nonsense"])
    with pytest.raises(verify.UnknownSuite):
        verify.run_suite("nonsense")


def test_plot_header_only_log(tmp_path):
    log = _write(tmp_path, "log.csv",
                 "t,px,py,pz,qw,qx,qy,qz,active\n")
    out = tmp_path / "plot.csv"
    assert cli.main(["plot", log, "--out", str(out)]) == 0
    assert out.read_text().splitlines() == ["t,r11,r12,r13,r21,r22,r23,r31,r32,r33,px,py,pz"]


def test_plot_bad_log(tmp_path, capsys):
    log = _write(tmp_path, "log.csv", "t,px,py,pz,qw,qx,qy,qz,active\n0,1,2\n")
    assert cli.main(["plot", log, "--out", str(tmp_path / "p.csv")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_plot_track_series_with_svg(tmp_path):
    run_dir = tmp_path / "run"
    assert cli.main(["simulate", "--case", "track", "--duration", "0.01", "--out", str(run_dir)]) == 0
    out, svg = tmp_path / "plot.csv", tmp_path / "plot.svg"
    assert cli.main(["plot", str(run_dir / "log.csv"), "--out", str(out), "--case", "track",
                     "--svg", str(svg)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0].endswith("sx,sy,cx,cy") and len(rows) == 11
    vals = np.array(rows[1].split(","), dtype=float)
    R = vals[1:10].reshape(3, 3)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(vals[10:12], vals[13:15], atol=1e-12)  # starts on the spiral
    assert svg.read_text().lstrip().startswith("<?xml")
