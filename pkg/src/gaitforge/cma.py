"""Covariance matrix adaptation evolution strategy with an ask/tell interface.

The update follows the usual modern formulation: weighted recombination of the
best half of the population, cumulative step-size adaptation and combined
rank-one / rank-mu covariance updates.  Sampled points are clamped to a box
before evaluation while the unclamped points drive the update.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

MAX_SEED = 2**63 - 1


class TerminationReason(str, enum.Enum):
    CONVERGED_FITNESS = "converged_fitness"
    SIGMA_COLLAPSED = "sigma_collapsed"
    BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass(frozen=True)
class CmaConfig:
    lower_bounds: tuple
    upper_bounds: tuple
    population_size: int = 0  # 0 selects the dimension-based default
    parent_count: int = 0
    max_evaluations: int = 3000
    fitness_tolerance: float = 1e-12
    sigma_floor: float = 1e-12
    stall_generations: int = 10
    weights: tuple = field(default=(), repr=False)
    c_sigma: float = 0.0
    d_sigma: float = 0.0
    c_c: float = 0.0
    c_1: float = 0.0
    c_mu: float = 0.0

    def __post_init__(self):
        lo = np.asarray(self.lower_bounds, dtype=float)
        hi = np.asarray(self.upper_bounds, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise ValueError("bounds must be two vectors of equal positive length")
        if np.any(~(lo < hi)):
            raise ValueError("every lower bound must be below its upper bound")
        object.__setattr__(self, "lower_bounds", tuple(float(x) for x in lo))
        object.__setattr__(self, "upper_bounds", tuple(float(x) for x in hi))
        n = lo.size
        lam = self.population_size or 4 + int(math.floor(3 * math.log(n)))
        mu = self.parent_count or lam // 2
        if lam < 2 or not 1 <= mu <= lam:
            raise ValueError("need population_size >= 2 and 1 <= parent_count <= population_size")
        if self.max_evaluations <= 0:
            raise ValueError("max_evaluations must be positive")
        if self.fitness_tolerance <= 0 or self.sigma_floor <= 0:
            raise ValueError("tolerances must be positive")
        if self.weights:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (mu,) or np.any(w <= 0) or np.any(np.diff(w) > 0):
                raise ValueError("weights must be mu positive non-increasing values")
            w = w / w.sum()
        else:
            w = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
            w = w / w.sum()
        mu_eff = 1.0 / float(np.sum(w**2))
        c_sigma = self.c_sigma or (mu_eff + 2) / (n + mu_eff + 5)
        d_sigma = self.d_sigma or 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + c_sigma
        c_c = self.c_c or (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
        c_1 = self.c_1 or 2 / ((n + 1.3) ** 2 + mu_eff)
        c_mu = self.c_mu or min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
        if c_1 + c_mu > 1 + 1e-15:
            raise ValueError("c_1 + c_mu must not exceed 1")
        for name, val in (("population_size", lam), ("parent_count", mu), ("weights", tuple(w)),
                          ("c_sigma", c_sigma), ("d_sigma", d_sigma), ("c_c", c_c),
                          ("c_1", c_1), ("c_mu", c_mu)):
            object.__setattr__(self, name, val)

    @property
    def dimension(self) -> int:
        return len(self.lower_bounds)

    @property
    def mu_eff(self) -> float:
        return 1.0 / float(np.sum(np.square(self.weights)))

    def clamp(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower_bounds, self.upper_bounds)


@dataclass
class SearchDistribution:
    mean: np.ndarray
    step_size: float
    covariance: np.ndarray
    path_sigma: np.ndarray
    path_cov: np.ndarray
    config: CmaConfig
    generation: int = 0
    eval_count: int = 0

    @property
    def dimension(self) -> int:
        return self.mean.size

    def copy(self) -> "SearchDistribution":
        return replace(self, mean=self.mean.copy(), covariance=self.covariance.copy(),
                       path_sigma=self.path_sigma.copy(), path_cov=self.path_cov.copy())


@dataclass
class Candidate:
    point: np.ndarray  # clamped, what the objective sees
    raw: np.ndarray  # unclamped sample, what the update uses
    seed: int
    fitness: float | None = None

    @property
    def evaluated(self) -> bool:
        return self.fitness is not None


@dataclass
class OptimizeResult:
    best: Candidate
    reason: TerminationReason
    history: list  # best fitness of each generation's own population
    distribution: SearchDistribution

    @property
    def evaluations(self) -> int:
        return self.distribution.eval_count


def init_distribution(mean, sigma: float, config: CmaConfig) -> SearchDistribution:
    m = np.array(mean, dtype=float)
    n = config.dimension
    if m.shape != (n,):
        raise ValueError(f"mean has shape {m.shape}, bounds have dimension {n}")
    if not sigma > 0 or not math.isfinite(sigma):
        raise ValueError("sigma must be a positive finite number")
    if np.any(m < config.lower_bounds) or np.any(m > config.upper_bounds):
        raise ValueError("initial mean lies outside the bounds")
    return SearchDistribution(
        mean=m, step_size=float(sigma), covariance=np.eye(n),
        path_sigma=np.zeros(n), path_cov=np.zeros(n), config=config,
    )


def _factor(cov: np.ndarray):
    vals, vecs = np.linalg.eigh(cov)
    if not np.all(np.isfinite(vals)) or vals.min() <= 0:
        raise np.linalg.LinAlgError("covariance is not positive definite")
    return vals, vecs


def ask(dist: SearchDistribution, rng: np.random.Generator) -> list[Candidate]:
    cfg = dist.config
    vals, vecs = _factor(dist.covariance)
    root = vecs * np.sqrt(vals)
    z = rng.standard_normal((cfg.population_size, dist.dimension))
    seeds = rng.integers(0, MAX_SEED, size=cfg.population_size)
    out = []
    for zi, seed in zip(z, seeds):
        raw = dist.mean + dist.step_size * (root @ zi)
        out.append(Candidate(point=cfg.clamp(raw), raw=raw, seed=int(seed)))
    return out


def _ranked(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Sort by fitness, ties broken by the raw point so input order never matters."""
    keys = [(c.fitness, tuple(c.raw)) for c in candidates]
    order = sorted(range(len(candidates)), key=keys.__getitem__)
    return [candidates[i] for i in order]


def repair_covariance(cov: np.ndarray) -> np.ndarray:
    c = 0.5 * (cov + cov.T)
    vals = np.linalg.eigvalsh(c)
    top = max(abs(vals.max()), np.finfo(float).tiny)
    if vals.min() < 1e-14 * top:
        c = c + (1e-14 * top - vals.min()) * np.eye(c.shape[0])
    # the shift can leave rounding asymmetry of order eps; restore exact symmetry
    return 0.5 * (c + c.T)


def tell(dist: SearchDistribution, evaluated: Sequence[Candidate]) -> SearchDistribution:
    cfg = dist.config
    n = dist.dimension
    if len(evaluated) != cfg.population_size:
        raise ValueError(f"expected {cfg.population_size} candidates, got {len(evaluated)}")
    for c in evaluated:
        if c.fitness is None or not math.isfinite(c.fitness):
            raise ValueError("every candidate needs a finite fitness")
        if c.raw.shape != (n,):
            raise ValueError("candidate dimension does not match the distribution")

    w = np.asarray(cfg.weights)
    mu_eff = cfg.mu_eff
    parents = _ranked(evaluated)[: cfg.parent_count]
    xs = np.array([c.raw for c in parents])
    old = dist.mean
    sigma = dist.step_size
    mean = w @ xs
    y = (mean - old) / sigma

    vals, vecs = _factor(dist.covariance)
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    ps = (1 - cfg.c_sigma) * dist.path_sigma + math.sqrt(cfg.c_sigma * (2 - cfg.c_sigma) * mu_eff) * (inv_root @ y)
    gen = dist.generation + 1
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    norm_ps = float(np.linalg.norm(ps))
    h_sigma = norm_ps / math.sqrt(1 - (1 - cfg.c_sigma) ** (2 * gen)) < (1.4 + 2 / (n + 1)) * chi_n
    pc = (1 - cfg.c_c) * dist.path_cov
    if h_sigma:
        pc = pc + math.sqrt(cfg.c_c * (2 - cfg.c_c) * mu_eff) * y

    steps = (xs - old) / sigma
    rank_mu = (steps.T * w) @ steps
    delta = 0.0 if h_sigma else cfg.c_c * (2 - cfg.c_c)
    cov = ((1 - cfg.c_1 - cfg.c_mu + cfg.c_1 * delta) * dist.covariance
           + cfg.c_1 * np.outer(pc, pc) + cfg.c_mu * rank_mu)
    cov = repair_covariance(cov)
    new_sigma = sigma * math.exp((cfg.c_sigma / cfg.d_sigma) * (norm_ps / chi_n - 1))
    if not new_sigma > 0 or not math.isfinite(new_sigma):
        new_sigma = np.finfo(float).tiny if new_sigma <= 0 else sigma
    return SearchDistribution(
        mean=mean, step_size=float(new_sigma), covariance=cov, path_sigma=ps, path_cov=pc,
        config=cfg, generation=gen, eval_count=dist.eval_count + len(evaluated),
    )


Objective = Callable[[np.ndarray], float]


def _evaluate(objective: Objective, points: list[np.ndarray], map_fn) -> list[float]:
    if map_fn is None:
        return [float(objective(p)) for p in points]
    return [float(v) for v in map_fn(objective, points)]


def optimize(objective: Objective, init_mean, init_sigma: float, config: CmaConfig,
             rng: np.random.Generator, *, evaluate_mean: bool = False,
             map_fn=None) -> OptimizeResult:
    """Run ask/evaluate/tell until a stopping rule fires.

    ``evaluate_mean`` replaces the first sample of generation 0 with the initial
    mean itself, so the result is never worse than the starting point.  ``map_fn``
    (``map``-like, order preserving) lets the caller evaluate a generation in
    parallel; results do not depend on it.
    """
    dist = init_distribution(init_mean, init_sigma, config)
    best: Candidate | None = None
    history: list[float] = []
    reason = TerminationReason.BUDGET_EXHAUSTED
    while True:
        if dist.eval_count + config.population_size > config.max_evaluations:
            reason = TerminationReason.BUDGET_EXHAUSTED
            break
        cands = ask(dist, rng)
        if evaluate_mean and dist.generation == 0:
            cands[0].raw = dist.mean.copy()
            cands[0].point = config.clamp(dist.mean)
        values = _evaluate(objective, [c.point for c in cands], map_fn)
        for c, v in zip(cands, values):
            if not math.isfinite(v):
                raise ValueError(f"objective returned a non-finite value at {c.point}")
            c.fitness = v
            if best is None or v < best.fitness:
                best = c
        history.append(min(values))
        dist = tell(dist, cands)
        if len(history) >= config.stall_generations:
            window = history[-config.stall_generations:]
            if max(window) - min(window) < config.fitness_tolerance:
                reason = TerminationReason.CONVERGED_FITNESS
                break
        if dist.step_size < config.sigma_floor:
            reason = TerminationReason.SIGMA_COLLAPSED
            break
    if best is None:
        raise ValueError("evaluation budget is smaller than one generation")
    return OptimizeResult(best=best, reason=reason, history=history, distribution=dist)


def running_best(history: Sequence[float]) -> np.ndarray:
    return np.minimum.accumulate(np.asarray(history, dtype=float))


# ---------------------------------------------------------------------------
# benchmark objectives
# ---------------------------------------------------------------------------

def sphere(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.dot(x, x))


def rosenbrock(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def rastrigin(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(10.0 * x.size + np.sum(x * x - 10.0 * np.cos(2 * math.pi * x)))


BENCHMARKS = {"sphere": sphere, "rosenbrock": rosenbrock, "rastrigin": rastrigin}
