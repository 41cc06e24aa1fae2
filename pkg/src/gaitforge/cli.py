"""``gaitforge`` command-line entry point.

Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cma, config
from .controller import SPEED_RANGE, GainVector, synthesize_reference
from .episode import cost, run_episode, trajectory_csv, walking_cost_exceeds_fall_floor
from .sweep import (
    _Evaluator, _atomic_write, export_results, format_range, from_unit, run_sweep,
    thread_count, to_unit,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _gains(text: str) -> GainVector:
    try:
        return GainVector.from_array(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected four comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="sectioned key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", type=Path, help="output directory (overrides run.out)")

    p = _Parser(prog="gaitforge", description="Gait gain optimization for a planar biped.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ev = sub.add_parser("evaluate", parents=[common], help="simulate one episode")
    ev.add_argument("--gains", type=_gains, help="k_fc,k_fp,k_hip,k_knee (default: seed gains)")
    ev.add_argument("--speed", type=float, help="desired speed in m/s (default: episode.desired_speed)")
    ev.add_argument("--trajectory", action="store_true", help="also write trajectory.csv")

    op = sub.add_parser("optimize", parents=[common], help="CMA optimization at one speed")
    op.add_argument("--speed", type=float, help="desired speed in m/s (default: episode.desired_speed)")
    op.add_argument("--budget", type=int, help="evaluation budget (overrides cma.budget)")

    sw = sub.add_parser("sweep", parents=[common], help="warm-started sweep over the speed grid")
    sw.add_argument("--grid", help="comma-separated speeds (overrides sweep.grid)")
    sw.add_argument("--budget", type=int, help="per-speed evaluation budget (overrides cma.budget)")
    sw.add_argument("--quiet", action="store_true", help="no per-speed progress lines")

    bench = sub.add_parser("cma-bench", parents=[common], help="optimizer self-test on analytic functions")
    bench.add_argument("--seeds", type=int, default=10, help="number of seeds (default 10)")
    return p


def _load(args) -> config.RunConfig:
    cfg = config.load(args.config) if args.config else config.default_config()
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=str(args.out))
    budget = getattr(args, "budget", None)
    if budget is not None:
        if budget <= 0:
            raise UsageError("--budget must be positive")
        cfg = replace(cfg, cma=replace(cfg.cma, budget=budget))
    return cfg


def _speed(args, cfg) -> float:
    v = cfg.episode.desired_speed if args.speed is None else args.speed
    lo, hi = SPEED_RANGE
    if not lo <= v <= hi:
        raise UsageError(f"--speed {v} outside [{lo}, {hi}] m/s")
    return v


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_evaluate(args, cfg) -> list[Path]:
    speed = _speed(args, cfg)
    K = args.gains or cfg.seed_gains
    if not cfg.controller.contains(K):
        raise UsageError(f"gains {tuple(K.as_array())} outside the configured bounds")
    ref = synthesize_reference(speed, cfg.model, cfg.controller)
    ep = cfg.episode_for(speed)
    res = run_episode(cfg.model, ref, K, ep, log=args.trajectory)
    print(f"speed={speed:g} gains={','.join(f'{g:g}' for g in K.as_array())}")
    print(f"cost={cost(res, ep):.6f} cot={res.cot:.6f} fell={str(res.fell).lower()} "
          f"avg_speed={res.avg_speed_last6:.6f} steps={res.step_count}")
    if walking_cost_exceeds_fall_floor(res, ep):
        print(f"note: walking cost exceeds the fall penalty floor ({ep.costs.fall:g})", file=sys.stderr)
    if not args.trajectory:
        return []
    path = _outdir(cfg) / "trajectory.csv"
    _atomic_write(path, trajectory_csv(res.trajectory))
    return [path]


def cmd_optimize(args, cfg) -> list[Path]:
    speed = _speed(args, cfg)
    ctrl = cfg.controller
    ref = synthesize_reference(speed, cfg.model, ctrl)
    ep = cfg.episode_for(speed)

    def objective(u):
        return cost(run_episode(cfg.model, ref, from_unit(u, ctrl), ep), ep)

    cma_cfg = cma.CmaConfig((0.0,) * 4, (1.0,) * 4, max_evaluations=cfg.cma.budget,
                            fitness_tolerance=cfg.cma.fitness_tolerance, sigma_floor=cfg.cma.sigma_floor)
    evaluator = _Evaluator(thread_count())
    try:
        out = cma.optimize(objective, to_unit(cfg.seed_gains, ctrl), cfg.cma.sigma, cma_cfg,
                           np.random.default_rng(cfg.seed), evaluate_mean=True,
                           map_fn=lambda f, pts: evaluator.map(f, pts))
    finally:
        evaluator.close()
    K = from_unit(out.best.point, ctrl)
    outdir = _outdir(cfg)
    gains_path, hist_path = outdir / "best_gains.csv", outdir / "fitness_history.csv"
    _atomic_write(gains_path, _csv([["k_fc", "k_fp", "k_hip", "k_knee", "cost"],
                                    [repr(float(g)) for g in K.as_array()] + [repr(out.best.fitness)]]))
    best = cma.running_best(out.history)
    lam = cma_cfg.population_size
    rows = [["generation", "evaluations", "generation_best", "best_so_far"]]
    rows += [[str(i), str((i + 1) * lam), repr(float(h)), repr(float(b))]
             for i, (h, b) in enumerate(zip(out.history, best))]
    _atomic_write(hist_path, _csv(rows))
    print(f"speed={speed:g} best cost={out.best.fitness:.6f} gains={','.join(f'{g:.6g}' for g in K.as_array())}")
    print(f"evaluations={out.evaluations} termination={out.reason.value}")
    return [gains_path, hist_path]


def cmd_sweep(args, cfg) -> list[Path]:
    if args.grid:
        try:
            grid = tuple(float(x) for x in args.grid.split(","))
        except ValueError:
            raise UsageError(f"--grid: expected comma-separated speeds, got {args.grid!r}")
        cfg = replace(cfg, sweep=replace(cfg.sweep, grid=grid))
    try:
        plan = cfg.plan()
    except ValueError as exc:
        raise UsageError(str(exc))

    def progress(r):
        if not args.quiet:
            print(f"  v={r.speed:g} fell={str(r.fell).lower()} cost={r.cost:.4f} "
                  f"avg_speed={r.avg_speed:.4f} evals={r.evaluations} ({r.reason})", flush=True)

    result = run_sweep(plan, cfg.model, progress=progress)
    written = export_results(result, cfg.out)
    print(f"stable range optimized: {format_range(result.optimized_range())}; "
          f"baseline: {format_range(result.baseline_range())}")
    return written


TARGETS = {"sphere": 1e-8, "rosenbrock": 1e-6, "rastrigin": 1e-6}
BENCH_SETUP = {  # start, sigma, budget
    "sphere": (1.0, 0.5, 3000),
    "rosenbrock": (0.0, 0.3, 30000),
    "rastrigin": (1.0, 0.5, 30000),
}


def bench_function(name: str, seeds: int, master_seed: int = 0, dim: int = 4) -> dict:
    start, sigma, budget = BENCH_SETUP[name]
    fn, target = cma.BENCHMARKS[name], TARGETS[name]
    bests, evals = [], []
    for k in range(seeds):
        cfg = cma.CmaConfig((-100.0,) * dim, (100.0,) * dim, max_evaluations=budget,
                            fitness_tolerance=1e-15, sigma_floor=1e-15)
        out = cma.optimize(fn, np.full(dim, start), sigma, cfg, np.random.default_rng([master_seed, k]))
        bests.append(out.best.fitness)
        hit = np.nonzero(cma.running_best(out.history) < target)[0]
        evals.append((int(hit[0]) + 1) * cfg.population_size if hit.size else None)
    reached = [e for e in evals if e is not None]
    return {
        "name": name, "target": target, "budget": budget,
        "median_best": float(np.median(bests)),
        "median_evals": float(np.median(reached)) if len(reached) * 2 > seeds else None,
        "passed": float(np.median(bests)) < target,
    }


def cmd_cma_bench(args, cfg) -> tuple[list[Path], bool]:
    if args.seeds <= 0:
        raise UsageError("--seeds must be positive")
    ok = True
    rows = [["function", "target", "budget", "median_best", "median_evals_to_target", "passed"]]
    for name in ("sphere", "rosenbrock", "rastrigin"):
        r = bench_function(name, args.seeds, cfg.seed)
        gate = name != "rastrigin"
        ok &= r["passed"] or not gate
        med = "n/a" if r["median_evals"] is None else f"{r['median_evals']:.0f}"
        tag = ("pass" if r["passed"] else "FAIL") if gate else "info"
        print(f"{name:<11} median best={r['median_best']:.3e} median evals to {r['target']:g}: {med} [{tag}]")
        rows.append([name, repr(r["target"]), str(r["budget"]), repr(r["median_best"]),
                     "" if r["median_evals"] is None else repr(r["median_evals"]), str(int(r["passed"]))])
    path = _outdir(cfg) / "cma_bench.csv"
    _atomic_write(path, _csv(rows))
    return [path], ok


def main(argv=None) -> int:
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        cfg = _load(args)
    except (UsageError, config.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        status = EXIT_OK
        if args.command == "evaluate":
            written = cmd_evaluate(args, cfg)
        elif args.command == "optimize":
            written = cmd_optimize(args, cfg)
        elif args.command == "sweep":
            written = cmd_sweep(args, cfg)
        else:
            written, ok = cmd_cma_bench(args, cfg)
            status = EXIT_OK if ok else EXIT_RUNTIME
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in written:
        print(f"wrote {path}")
    print(f"elapsed {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
