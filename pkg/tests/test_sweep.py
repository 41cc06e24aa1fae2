import math

import numpy as np
import pytest

from gaitforge.controller import ControllerConfig, GainVector
from gaitforge.dynamics import RobotModel
from gaitforge.sweep import (
    COT_HEADER, SpeedResult, SweepPlan, SweepResult, csv_tables, evaluate_gains, export_results,
    format_range, from_unit, read_results, run_sweep, stable_range, thread_count, to_unit,
    warm_start,
)

MODEL = RobotModel()
SEED_K = GainVector(-0.2, -0.5, 50.0, 200.0)


def result(speed, fell, cot=0.2, avg=None, gains=SEED_K):
    return SpeedResult(speed, gains, 1.0, fell, cot, speed if avg is None else avg)


def flags(*fell, speeds=None):
    speeds = speeds or [round(0.1 * (i + 1), 1) for i in range(len(fell))]
    return [result(v, bool(f)) for v, f in zip(speeds, fell)]


@pytest.fixture(scope="module")
def small_sweep():
    plan = SweepPlan(seed_gains=SEED_K, grid=(0.3, 0.4), budget=24)
    return run_sweep(plan, MODEL, threads=1)


def test_sweep_order_goes_up_then_down_from_seed():
    plan = SweepPlan(seed_gains=SEED_K)
    assert plan.order() == [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.3, 0.2, 0.1]
    assert SweepPlan(seed_gains=SEED_K, grid=(0.4,)).order() == [0.4]
    assert SweepPlan(seed_gains=SEED_K, grid=(0.4, 0.8)).order() == [0.4, 0.8]


@pytest.mark.parametrize("kw", [dict(grid=()), dict(grid=(0.5, 0.3)), dict(grid=(0.3, 0.5)),
                                dict(budget=0), dict(sigma=0.0),
                                dict(seed_gains=GainVector(5.0, 0.0, 50.0, 50.0))])
def test_plan_validation(kw):
    with pytest.raises(ValueError):
        SweepPlan(**{"seed_gains": SEED_K, **kw})


def test_unit_box_mapping_round_trips():
    ctrl = ControllerConfig()
    assert to_unit(GainVector(-1, -2, 1, 1), ctrl) == pytest.approx([0, 0, 0, 0])
    assert to_unit(GainVector(1, 2, 500, 500), ctrl) == pytest.approx([1, 1, 1, 1])
    assert to_unit(GainVector(0, 0, 250.5, 250.5), ctrl) == pytest.approx([0.5] * 4)
    back = from_unit(to_unit(SEED_K, ctrl), ctrl)
    assert back.as_array() == pytest.approx(SEED_K.as_array(), rel=1e-14)


def test_warm_start_uses_neighbor_gains_and_narrower_step():
    plan = SweepPlan(seed_gains=SEED_K, sigma=0.2)
    K = GainVector(0.5, 1.0, 100.0, 300.0)
    mean, sigma = warm_start(result(0.5, False, gains=K), plan)
    assert mean == pytest.approx(to_unit(K, plan.controller))
    assert sigma == pytest.approx(0.06)


def test_stable_range_examples():
    assert stable_range(flags(0, 0, 0, 1, 0)) == (0.1, 0.3)
    assert stable_range(flags(1, 1, 1)) is None
    assert stable_range(flags(0, 1, 0)) == (0.1, 0.1)
    assert stable_range(flags(0, 1, 0), seed_speed=0.3) == (0.3, 0.3)
    assert stable_range(flags(1, 0, 0, 1, 0, 0, 0)) == (0.5, 0.7)
    assert stable_range([]) is None
    assert format_range((0.2, 0.9)) == "[0.2, 0.9]"
    assert format_range(None) == "none"


def test_csv_tables_leave_fallen_cells_empty():
    opt = [result(0.1, True), result(0.2, False, cot=0.3, avg=0.19)]
    base = [result(0.1, True), result(0.2, True)]
    t = csv_tables(SweepResult(opt, base))
    assert t["cot_vs_speed.csv"][0] == list(COT_HEADER)
    assert t["cot_vs_speed.csv"][1] == ["0.1", "", "", "1", "1"]
    assert t["cot_vs_speed.csv"][2] == ["0.2", "0.3", "", "0", "1"]
    err = float(t["speed_error_vs_speed.csv"][2][1])
    assert err == pytest.approx(5.0)


def test_export_round_trip_and_no_temporaries(tmp_path):
    opt = [result(0.1, True), result(0.2, False, cot=0.3, avg=0.19)]
    base = [result(0.1, False, cot=0.5, avg=0.08), result(0.2, True)]
    written = export_results(SweepResult(opt, base), tmp_path)
    names = sorted(p.name for p in written)
    assert names == sorted(p.name for p in tmp_path.iterdir())
    assert len(names) == 6
    back = read_results(tmp_path)
    assert back["speed"] == [0.1, 0.2]
    assert math.isnan(back["cot_opt"][0]) and back["cot_opt"][1] == 0.3
    assert back["fell_opt"] == [True, False]
    assert back["pct_err_base"][0] == pytest.approx(20.0)
    assert back["gains"][0] == SEED_K
    svg = (tmp_path / "cot_vs_speed.svg").read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_single_speed_sweep_never_loses_to_its_seed():
    plan = SweepPlan(seed_gains=SEED_K, grid=(0.4,), budget=16)
    res = run_sweep(plan, MODEL, threads=1)
    assert len(res.optimized) == len(res.baseline) == 1
    assert res.optimized[0].cost <= res.baseline[0].cost
    assert res.optimized[0].evaluations <= 16


def test_sweep_results_do_not_depend_on_thread_count(small_sweep):
    plan = small_sweep.plan
    threaded = run_sweep(plan, MODEL, threads=4)
    assert csv_tables(threaded) == csv_tables(small_sweep)


def test_baseline_matches_direct_evaluation(small_sweep):
    direct = evaluate_gains(MODEL, small_sweep.plan, 0.3, SEED_K)
    assert small_sweep.baseline[0].cost == direct.cost
    assert small_sweep.speeds == [0.3, 0.4]


def test_thread_count_environment(monkeypatch):
    monkeypatch.setenv("GAITFORGE_THREADS", "3")
    assert thread_count() == 3
    monkeypatch.setenv("GAITFORGE_THREADS", "0")
    assert thread_count() >= 1
    monkeypatch.delenv("GAITFORGE_THREADS")
    assert thread_count() >= 1
    monkeypatch.setenv("GAITFORGE_THREADS", "-2")
    with pytest.raises(ValueError):
        thread_count()


def test_percent_error_example():
    r = result(0.5, False, avg=0.45)
    assert r.error == pytest.approx(0.05)
    assert r.percent_error == pytest.approx(10.0)


def test_warm_step_example_from_cold_half():
    plan = SweepPlan(seed_gains=SEED_K, sigma=0.5)
    _, sigma = warm_start(result(0.5, False), plan)
    assert sigma == pytest.approx(0.15)
