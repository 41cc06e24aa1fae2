import csv
import subprocess
import sys

import numpy as np
import pytest

from gaitforge.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def field(out, name):
    for token in out.split():
        if token.startswith(name + "="):
            return token.split("=", 1)[1]
    raise KeyError(name)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_evaluate_limp_gains_report_a_fall(capsys, tmp_path):
    code, out, _ = run(capsys, "evaluate", "--gains", "0,0,1,1", "--speed", "0.4", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert field(out, "fell") == "true"
    assert 100 <= float(field(out, "cost")) <= 240


def test_evaluate_fixture_gains_walk_and_are_reproducible(capsys, tmp_path):
    argv = ("evaluate", "--gains", "0,-0.5,100,200", "--speed", "0.5", "--out", str(tmp_path))
    code, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv)
    assert code == EXIT_OK
    assert field(a, "fell") == "false"
    assert int(field(a, "steps")) >= 8
    assert a == b


def test_evaluate_writes_trajectory(capsys, tmp_path):
    code, out, _ = run(capsys, "evaluate", "--trajectory", "--out", str(tmp_path))
    assert code == EXIT_OK
    rows = read_csv(tmp_path / "trajectory.csv")
    assert rows[0][0] == "t" and rows[0][-1] == "E_elec"
    assert len(rows) > 100


def test_optimize_writes_gains_and_history(capsys, tmp_path):
    code, out, _ = run(capsys, "optimize", "--speed", "0.4", "--budget", "24", "--out", str(tmp_path))
    assert code == EXIT_OK
    gains = read_csv(tmp_path / "best_gains.csv")
    assert gains[0] == ["k_fc", "k_fp", "k_hip", "k_knee", "cost"]
    assert len(gains[1]) == 5
    hist = read_csv(tmp_path / "fitness_history.csv")
    assert hist[0] == ["generation", "evaluations", "generation_best", "best_so_far"]
    best = np.array([float(r[3]) for r in hist[1:]])
    assert len(best) == 3
    assert np.all(np.diff(best) <= 0)
    assert best[-1] == pytest.approx(float(gains[1][4]))


def test_sweep_prints_summary_and_writes_files(capsys, tmp_path):
    code, out, _ = run(capsys, "sweep", "--grid", "0.4", "--budget", "8", "--quiet", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert "stable range optimized: " in out and "; baseline: " in out
    names = {p.name for p in tmp_path.iterdir()}
    assert {"cot_vs_speed.csv", "speed_error_vs_speed.csv", "gains_vs_speed.csv"} <= names
    assert {"cot_vs_speed.svg", "speed_error_vs_speed.svg", "gains_vs_speed.svg"} <= names


def test_cma_bench_passes(capsys, tmp_path):
    code, out, _ = run(capsys, "cma-bench", "--seeds", "3", "--out", str(tmp_path))
    assert code == EXIT_OK
    assert "sphere" in out and "[pass]" in out
    assert read_csv(tmp_path / "cma_bench.csv")[0][0] == "function"


@pytest.mark.parametrize("argv", [
    [],
    ["walk"],
    ["evaluate", "--speed", "9"],
    ["evaluate", "--gains", "1,2"],
    ["evaluate", "--gains", "0,0,0,0"],
    ["optimize", "--budget", "0"],
    ["evaluate", "--seed", "-1"],
    ["sweep", "--grid", "0.1,x"],
    ["sweep", "--grid", "0.2,0.3"],
])
def test_usage_errors_exit_one(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == EXIT_USAGE
    assert err


def test_bad_config_exits_one_with_location(capsys, tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[episode]\nt_sim = -1\n")
    code, _, err = run(capsys, "evaluate", "--config", str(p))
    assert code == EXIT_USAGE
    assert "bad.ini:2" in err and "episode.t_sim" in err


def test_unwritable_output_exits_two(capsys, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code, _, err = run(capsys, "evaluate", "--trajectory", "--out", str(blocker / "sub"))
    assert code == EXIT_RUNTIME
    assert err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK
    capsys.readouterr()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gaitforge", "evaluate", "--gains", "0,0,1,1",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "fell=true" in proc.stdout
