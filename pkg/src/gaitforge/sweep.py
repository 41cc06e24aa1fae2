"""Warm-started optimization across a grid of desired speeds."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cma
from .controller import ControllerConfig, GainVector, synthesize_reference
from .dynamics import RobotModel
from .episode import EpisodeConfig, cost, run_episode

WARM_SIGMA_FACTOR = 0.3


@dataclass(frozen=True)
class SweepPlan:
    seed_gains: GainVector
    grid: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    seed_speed: float = 0.4
    sigma: float = 0.2  # in box-normalized gain units
    budget: int = 480
    episode: EpisodeConfig = EpisodeConfig(desired_speed=0.4)
    controller: ControllerConfig = ControllerConfig()
    fitness_tolerance: float = 1e-3
    sigma_floor: float = 1e-4
    master_seed: int = 0

    def __post_init__(self):
        grid = tuple(float(v) for v in self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise ValueError("speed grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("speed grid must be strictly increasing")
        if not any(math.isclose(v, self.seed_speed, abs_tol=1e-12) for v in grid):
            raise ValueError(f"seed speed {self.seed_speed} is not on the grid")
        if self.budget <= 0:
            raise ValueError("per-speed budget must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.controller.contains(self.seed_gains):
            raise ValueError("seed gains lie outside the gain bounds")

    def order(self) -> list[float]:
        """Seed speed, then the ascending branch, then the descending branch."""
        i = self.seed_index
        return [self.grid[i]] + list(self.grid[i + 1:]) + list(reversed(self.grid[:i]))

    @property
    def seed_index(self) -> int:
        return min(range(len(self.grid)), key=lambda k: abs(self.grid[k] - self.seed_speed))


@dataclass
class SpeedResult:
    speed: float
    gains: GainVector
    cost: float
    fell: bool
    cot: float
    avg_speed: float
    evaluations: int = 0
    reason: str = ""

    @property
    def error(self) -> float:
        return abs(self.avg_speed - self.speed)

    @property
    def percent_error(self) -> float:
        return 100.0 * self.error / self.speed


@dataclass
class SweepResult:
    optimized: list
    baseline: list
    plan: SweepPlan | None = field(default=None, repr=False)

    @property
    def speeds(self) -> list[float]:
        return [r.speed for r in self.optimized]

    def optimized_range(self):
        return stable_range(self.optimized, self._seed())

    def baseline_range(self):
        return stable_range(self.baseline, self._seed())

    def _seed(self):
        return None if self.plan is None else self.plan.seed_speed


# ---------------------------------------------------------------------------
# gain normalization
# ---------------------------------------------------------------------------

def to_unit(K: GainVector, ctrl: ControllerConfig) -> np.ndarray:
    lo, hi = np.asarray(ctrl.lower_bounds), np.asarray(ctrl.upper_bounds)
    return (K.as_array() - lo) / (hi - lo)


def from_unit(u, ctrl: ControllerConfig) -> GainVector:
    lo, hi = np.asarray(ctrl.lower_bounds), np.asarray(ctrl.upper_bounds)
    return GainVector.from_array(lo + np.asarray(u, dtype=float) * (hi - lo))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def thread_count() -> int:
    raw = os.environ.get("GAITFORGE_THREADS", "").strip()
    cores = os.cpu_count() or 1
    if not raw:
        return cores
    n = int(raw)
    if n < 0:
        raise ValueError("GAITFORGE_THREADS must be non-negative")
    return cores if n == 0 else n


class _Evaluator:
    def __init__(self, threads: int):
        self.pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def map(self, fn, items):
        if self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def episode_for(plan: SweepPlan, speed: float) -> EpisodeConfig:
    return replace(plan.episode, desired_speed=float(speed))


def evaluate_gains(model: RobotModel, plan: SweepPlan, speed: float, K: GainVector) -> SpeedResult:
    ref = synthesize_reference(speed, model, plan.controller)
    ep = episode_for(plan, speed)
    res = run_episode(model, ref, K, ep)
    return SpeedResult(speed=float(speed), gains=K, cost=cost(res, ep), fell=res.fell,
                       cot=res.cot, avg_speed=res.avg_speed_last6)


def warm_start(neighbor: SpeedResult, plan: SweepPlan):
    """Initial (mean, sigma) in gain units' normalized box for the next speed."""
    return to_unit(neighbor.gains, plan.controller), WARM_SIGMA_FACTOR * plan.sigma


def _speed_seed(plan: SweepPlan, speed: float) -> np.random.Generator:
    return np.random.default_rng([plan.master_seed, int(round(speed * 1e6))])


def optimize_speed(model: RobotModel, plan: SweepPlan, speed: float, mean, sigma: float,
                   evaluator: _Evaluator | None = None) -> SpeedResult:
    ctrl = plan.controller
    ref = synthesize_reference(speed, model, ctrl)
    ep = episode_for(plan, speed)

    def objective(u):
        return cost(run_episode(model, ref, from_unit(u, ctrl), ep), ep)

    cfg = cma.CmaConfig((0.0,) * 4, (1.0,) * 4, max_evaluations=plan.budget,
                        fitness_tolerance=plan.fitness_tolerance, sigma_floor=plan.sigma_floor)
    map_fn = None if evaluator is None else (lambda f, pts: evaluator.map(f, pts))
    out = cma.optimize(objective, np.clip(mean, 0.0, 1.0), sigma, cfg, _speed_seed(plan, speed),
                       evaluate_mean=True, map_fn=map_fn)
    best = evaluate_gains(model, plan, speed, from_unit(out.best.point, ctrl))
    best.evaluations = out.evaluations
    best.reason = out.reason.value
    return best


def run_sweep(plan: SweepPlan, model: RobotModel = RobotModel(), progress=None,
              threads: int | None = None) -> SweepResult:
    evaluator = _Evaluator(thread_count() if threads is None else threads)
    solved: dict[float, SpeedResult] = {}
    try:
        seed_speed = plan.grid[plan.seed_index]
        for speed in plan.order():
            if speed == seed_speed:
                mean, sigma = to_unit(plan.seed_gains, plan.controller), plan.sigma
            else:
                neighbor = _neighbor(plan, solved, speed)
                mean, sigma = warm_start(neighbor, plan)
            solved[speed] = optimize_speed(model, plan, speed, mean, sigma, evaluator)
            if progress is not None:
                progress(solved[speed])
    finally:
        evaluator.close()
    optimized = [solved[v] for v in plan.grid]
    baseline = [evaluate_gains(model, plan, v, plan.seed_gains) for v in plan.grid]
    return SweepResult(optimized=optimized, baseline=baseline, plan=plan)


def _neighbor(plan: SweepPlan, solved: dict, speed: float) -> SpeedResult:
    i = plan.grid.index(speed)
    j = i - 1 if i > plan.seed_index else i + 1
    return solved[plan.grid[j]]


def stable_range(results, seed_speed: float | None = None):
    """Longest run of consecutive non-falling speeds as (low, high), or None.

    Equal-length runs are resolved in favour of the one containing the seed
    speed, then the lower one.
    """
    runs, start = [], None
    for i, r in enumerate(results):
        if not r.fell and start is None:
            start = i
        if (r.fell or i == len(results) - 1) and start is not None:
            end = i - 1 if r.fell else i
            runs.append((start, end))
            start = None
    if not runs:
        return None

    def key(run):
        a, b = run
        has_seed = seed_speed is not None and any(
            math.isclose(results[k].speed, seed_speed, abs_tol=1e-12) for k in range(a, b + 1))
        return (b - a, has_seed, -a)

    a, b = max(runs, key=key)
    return results[a].speed, results[b].speed


def format_range(r) -> str:
    return "none" if r is None else f"[{r[0]:g}, {r[1]:g}]"


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

COT_HEADER = ("speed", "cot_opt", "cot_base", "fell_opt", "fell_base")
ERROR_HEADER = ("speed", "pct_err_opt", "pct_err_base")
GAINS_HEADER = ("speed", "k_fc", "k_fp", "k_hip", "k_knee")


def _num(x: float) -> str:
    return repr(float(x))


def _maybe(r: SpeedResult, value: float) -> str:
    return "" if r.fell else _num(value)


def csv_tables(sweep: SweepResult) -> dict[str, list[list[str]]]:
    cot, err, gains = [list(COT_HEADER)], [list(ERROR_HEADER)], [list(GAINS_HEADER)]
    for o, b in zip(sweep.optimized, sweep.baseline):
        v = _num(o.speed)
        cot.append([v, _maybe(o, o.cot), _maybe(b, b.cot), str(int(o.fell)), str(int(b.fell))])
        err.append([v, _maybe(o, o.percent_error), _maybe(b, b.percent_error)])
        gains.append([v] + [_num(g) for g in o.gains.as_array()])
    return {"cot_vs_speed.csv": cot, "speed_error_vs_speed.csv": err, "gains_vs_speed.csv": gains}


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def export_results(sweep: SweepResult, out_dir) -> list[Path]:
    from .plots import line_plot

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    written = []
    tables = csv_tables(sweep)
    for name, rows in tables.items():
        path = out / name
        _atomic_write(path, _csv_text(rows))
        written.append(path)

    speeds = sweep.speeds
    opt, base = sweep.optimized, sweep.baseline
    plots = {
        "cot_vs_speed.svg": line_plot(
            speeds, {"optimized": [None if r.fell else r.cot for r in opt],
                     "baseline": [None if r.fell else r.cot for r in base]},
            "Cost of transport", "speed (m/s)", "CoT"),
        "speed_error_vs_speed.svg": line_plot(
            speeds, {"optimized": [None if r.fell else r.percent_error for r in opt],
                     "baseline": [None if r.fell else r.percent_error for r in base]},
            "Speed tracking error", "speed (m/s)", "error (%)"),
        "gains_vs_speed.svg": line_plot(
            speeds, {name: [getattr(r.gains, name) / scale for r in opt]
                     for name, scale in (("k_fc", 1.0), ("k_fp", 1.0), ("k_hip", 100.0), ("k_knee", 100.0))},
            "Optimized gains (k_hip, k_knee in units of 100 N*m/rad)", "speed (m/s)", "gain"),
    }
    for name, svg in plots.items():
        path = out / name
        _atomic_write(path, svg)
        written.append(path)
    return written


def read_results(out_dir) -> dict[str, list]:
    """Parse exported CSV files back into columns; empty cells become NaN."""
    out = Path(out_dir)

    def rows(name, header):
        with open(out / name, newline="") as fh:
            data = list(csv.reader(fh))
        if tuple(data[0]) != header:
            raise ValueError(f"{name}: unexpected header {data[0]}")
        return data[1:]

    def num(x):
        return math.nan if x == "" else float(x)

    cot = rows("cot_vs_speed.csv", COT_HEADER)
    err = rows("speed_error_vs_speed.csv", ERROR_HEADER)
    gains = rows("gains_vs_speed.csv", GAINS_HEADER)
    return {
        "speed": [float(r[0]) for r in cot],
        "cot_opt": [num(r[1]) for r in cot],
        "cot_base": [num(r[2]) for r in cot],
        "fell_opt": [r[3] == "1" for r in cot],
        "fell_base": [r[4] == "1" for r in cot],
        "pct_err_opt": [num(r[1]) for r in err],
        "pct_err_base": [num(r[2]) for r in err],
        "gains": [GainVector.from_array([float(x) for x in r[1:]]) for r in gains],
    }
