"""Fixed-horizon walking episodes and their cost."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .controller import (
    ControllerConfig, GainVector, GaitReference, _normalize, _targets, _torques,
)
from .dynamics import (
    NQ, FallThresholds, RobotModel, RobotState, TRAJECTORY_COLUMNS,
    _Tables, _is_fallen, _impact, _point, _rk4, _site, _link_angles, _unit_vectors,
)

MAX_STEPS = 512
D_FLOOR = 0.01
LAST_STEPS = 6
STEP_ERR_MIN_TIME = 0.02  # running step speed is too noisy before this (s)


@dataclass(frozen=True)
class CostConstants:
    fall: float = 100.0
    time: float = 20.0
    cot: float = 30.0
    speed: float = 1000.0

    def __post_init__(self):
        if min(self.fall, self.time, self.cot, self.speed) <= 0:
            raise ValueError("cost constants must be positive")


@dataclass(frozen=True)
class EpisodeConfig:
    desired_speed: float
    t_sim: float = 7.0
    dt: float = 1e-3
    perturbation: float = 0.05
    seed: int | None = None
    falls: FallThresholds = FallThresholds()
    costs: CostConstants = CostConstants()
    damping: tuple = (5.0, 5.0)  # hip, knee (N*m*s/rad)

    def __post_init__(self):
        if len(self.damping) != 2 or min(self.damping) < 0:
            raise ValueError("damping must be two non-negative values")
        if not self.t_sim > 0:
            raise ValueError("t_sim must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.perturbation < 0:
            raise ValueError("perturbation must be non-negative")

    @property
    def episode_seed(self) -> int:
        """Explicit seed, or one derived from the desired speed."""
        if self.seed is not None:
            return int(self.seed)
        return zlib.crc32(f"{self.desired_speed:.6f}".encode())


@dataclass(frozen=True)
class StepRecord:
    touchdown_time: float
    length: float
    duration: float
    speed: float


@dataclass
class EpisodeResult:
    fell: bool
    t_fall: float | None
    distance: float
    energy: float
    cot: float
    avg_speed_last6: float
    steps: list = field(default_factory=list)
    degenerate_distance: bool = False
    duration: float = 0.0
    trajectory: np.ndarray | None = None

    @property
    def step_count(self) -> int:
        return len(self.steps)

    CSV_FIELDS = ("fell", "t_fall", "distance", "energy", "cot", "avg_speed_last6",
                  "step_count", "duration")

    def csv_row(self) -> list[str]:
        return [
            str(int(self.fell)),
            "" if self.t_fall is None else repr(self.t_fall),
            repr(self.distance), repr(self.energy), repr(self.cot),
            repr(self.avg_speed_last6), str(self.step_count), repr(self.duration),
        ]


# ---------------------------------------------------------------------------
# simulation kernel
# ---------------------------------------------------------------------------

@nb.njit(cache=True)
def _foot(y, C):
    q = y[:NQ]
    dq = y[NQ:2 * NQ]
    return _site(q, dq, C, 6)


@nb.njit(cache=True, nogil=True)
def _simulate(y0, p, W, w, C, coeffs, th0, th1, gains, d_hip, d_knee,
              v_des, t_sim, dt, hip_min, max_pitch, log):
    """Run one episode.  Returns summary scalars, the step table and an optional log."""
    k_fc, k_fp, k_hip, k_knee = gains[0], gains[1], gains[2], gains[3]
    limit = p[13]
    steps = np.zeros((MAX_STEPS, 4))
    n_steps = 0
    n_rows = int(t_sim / dt) + MAX_STEPS + 4 if log else 1
    traj = np.zeros((n_rows, 18))
    rows = 0

    y = y0.copy()
    x_st = 0.0
    hx, _, _, _ = _site(y[:NQ], y[NQ:2 * NQ], C, 5)
    hip_start = hx
    t = 0.0
    last_td = 0.0
    step_x0 = hip_start
    speed_err = 0.0
    fell = False
    t_fall = math.nan
    tau = np.zeros(4)

    while t < t_sim - 1e-12:
        h = min(dt, t_sim - t)
        q = y[:NQ]
        dq = y[NQ:2 * NQ]
        raw, _, _, _ = _site(q, dq, C, 5)
        s = _normalize(raw, th0, th1)
        elapsed = t - last_td
        if elapsed > STEP_ERR_MIN_TIME:
            speed_err = (x_st + raw - step_x0) / elapsed - v_des
        else:
            speed_err = 0.0
        tgt = _targets(coeffs, s, k_fc, k_fp, speed_err)
        tau = _torques(tgt, q[1:], dq[1:], k_hip, k_knee, d_hip, d_knee, limit)
        if log:
            traj[rows, 0] = t
            traj[rows, 1] = x_st
            traj[rows, 2:7] = q
            traj[rows, 8:13] = dq
            traj[rows, 13:17] = tau
            traj[rows, 17] = y[2 * NQ]
            rows += 1

        y_new = _rk4(y, tau, h, p, W, w)
        finite = True
        for i in range(2 * NQ + 1):
            if not math.isfinite(y_new[i]):
                finite = False
        if not finite:
            fell = True
            t_fall = t
            break

        _, fy0, _, _ = _foot(y, C)
        fx1, fy1, _, fvy1 = _foot(y_new, C)
        if fy0 > 0.0 and fy1 <= 0.0 and fx1 > 0.0 and fvy1 < 0.0:
            lo = 0.0
            hi = h
            y_hit = y_new
            h_hit = h
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                trial = _rk4(y, tau, mid, p, W, w)
                _, fy, _, _ = _foot(trial, C)
                y_hit = trial
                h_hit = mid
                if abs(fy) < 1e-8:
                    break
                if fy > 0.0:
                    lo = mid
                else:
                    hi = mid
            q_new, dq_new, fx = _impact(y_hit[:NQ].copy(), y_hit[NQ:2 * NQ].copy(), p, W, w, C)
            t += h_hit
            y = np.empty(2 * NQ + 1)
            y[:NQ] = q_new
            y[NQ:2 * NQ] = dq_new
            y[2 * NQ] = y_hit[2 * NQ]
            duration = t - last_td
            if n_steps < MAX_STEPS and duration > 0.0:
                steps[n_steps, 0] = t
                steps[n_steps, 1] = fx
                steps[n_steps, 2] = duration
                steps[n_steps, 3] = fx / duration
                n_steps += 1
            last_td = t
            x_st += fx
            hx, _, _, _ = _site(y[:NQ], y[NQ:2 * NQ], C, 5)
            step_x0 = x_st + hx
        else:
            y = y_new
            t += h

        if _is_fallen(y[:NQ], y[NQ:2 * NQ], C, hip_min, max_pitch):
            fell = True
            t_fall = t
            break

    hx, _, _, _ = _site(y[:NQ], y[NQ:2 * NQ], C, 5)
    distance = x_st + hx - hip_start
    if log:
        traj[rows, 0] = t
        traj[rows, 1] = x_st
        traj[rows, 2:7] = y[:NQ]
        traj[rows, 8:13] = y[NQ:2 * NQ]
        traj[rows, 13:17] = tau
        traj[rows, 17] = y[2 * NQ]
        rows += 1
    return fell, t_fall, t, y[2 * NQ], distance, steps[:n_steps].copy(), traj[:rows].copy()


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def launch_speed(model: RobotModel, ref: GaitReference) -> float:
    """Hip speed at step start of a point-mass vault whose apex speed is the target.

    A gait starting at the desired average speed would stall on the first step
    at low speeds; this is the kinematic start condition of the nominal gait.
    """
    reach = ref.theta_end
    r = model.leg_length
    drop = r - math.sqrt(max(r * r - reach * reach, 0.0))
    return math.sqrt(ref.speed**2 + 2.0 * model.gravity * drop)


def initial_state(model: RobotModel, ref: GaitReference, config: EpisodeConfig) -> RobotState:
    """Nominal start-of-step posture and rates plus a seeded joint-rate perturbation."""
    joints = ref.evaluate(0.0)
    rate = launch_speed(model, ref) / (ref.theta_end - ref.theta_start)
    rates = ref.derivative(0.0) * rate
    rng = np.random.default_rng(config.episode_seed)
    jitter = rng.uniform(-config.perturbation, config.perturbation, size=NQ)
    q = np.concatenate([[0.0, ref.torso_pitch], joints])
    dq = np.concatenate([[0.0, 0.0], rates]) + np.concatenate([[0.0], jitter])
    return RobotState(q=q, dq=dq)


def run_episode(model: RobotModel, ref: GaitReference, K: GainVector,
                config: EpisodeConfig, log: bool = False) -> EpisodeResult:
    """Simulate one episode; never raises for bad gains (blow-ups count as falls)."""
    p, W, w, C = _Tables.get(model)
    start = initial_state(model, ref, config)
    y0 = np.concatenate([start.q[1:], start.dq[1:], [0.0]])
    hip_min = config.falls.hip_height_fraction * model.leg_length
    fell, t_fall, t_end, energy, distance, steps, traj = _simulate(
        y0, p, W, w, C, ref.coefficients, ref.theta_start, ref.theta_end,
        K.as_array(), float(config.damping[0]), float(config.damping[1]),
        config.desired_speed, config.t_sim, config.dt, hip_min, config.falls.max_pitch, log,
    )
    records = [StepRecord(float(a), float(b), float(c), float(d)) for a, b, c, d in steps]
    if not math.isfinite(distance):
        distance = 0.0
    cot, degenerate = compute_cot(energy, distance, model, flag=True)
    return EpisodeResult(
        fell=bool(fell),
        t_fall=float(t_fall) if fell else None,
        distance=float(distance),
        energy=float(energy),
        cot=cot,
        avg_speed_last6=average_speed_last_steps(records),
        steps=records,
        degenerate_distance=degenerate,
        duration=float(t_end),
        trajectory=traj if log else None,
    )


def average_speed_last_steps(steps, n: int = LAST_STEPS) -> float:
    if not steps:
        return 0.0
    window = steps[-n:]
    return float(sum(st.speed for st in window) / len(window))


def compute_cot(energy: float, distance: float, model: RobotModel, flag: bool = False):
    """Dimensionless cost of transport with a 1 cm distance floor.

    With ``flag=True`` also returns whether the floor was applied.
    """
    d = max(distance, D_FLOOR)
    cot = energy / (model.total_mass * model.gravity * d)
    if flag:
        return float(cot), distance < D_FLOOR
    return float(cot)


def cost(result: EpisodeResult, config: EpisodeConfig) -> float:
    c = config.costs
    if result.fell:
        return c.fall + c.time * (config.t_sim - result.t_fall)
    dv = result.avg_speed_last6 - config.desired_speed
    return c.cot * result.cot + c.speed * (dv * dv)


def walking_cost_exceeds_fall_floor(result: EpisodeResult, config: EpisodeConfig) -> bool:
    """True when a non-falling episode scores worse than the cheapest fall."""
    return (not result.fell) and cost(result, config) > config.costs.fall


def make_objective(model: RobotModel, ref: GaitReference, config: EpisodeConfig):
    """Total, deterministic map from a gain array to the episode cost."""

    def objective(k) -> float:
        return cost(run_episode(model, ref, GainVector.from_array(k), config), config)

    return objective


def trajectory_csv(traj: np.ndarray) -> str:
    lines = [",".join(TRAJECTORY_COLUMNS)]
    for row in traj:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
