"""Phase-variable walking controller.

Joint targets are degree-5 Bezier curves over a normalized phase ``s``.  The
phase is the horizontal offset of the hip pivot from the stance foot, so the
gait is clocked by the robot's own progress rather than by time.  Two gains
reshape the nominal curves (swing-knee clearance bump, stance-hip placement
ramp) and two gains set the stiffness of the joint-level PD loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .dynamics import RobotModel, RobotState, MotorCommand, _Tables, _site

JOINTS = ("stance_hip", "stance_knee", "swing_hip", "swing_knee")
DEGREE = 5


@dataclass(frozen=True)
class GainVector:
    k_fc: float
    k_fp: float
    k_hip: float
    k_knee: float

    def as_array(self) -> np.ndarray:
        return np.array([self.k_fc, self.k_fp, self.k_hip, self.k_knee], dtype=float)

    @classmethod
    def from_array(cls, values) -> "GainVector":
        v = [float(x) for x in values]
        if len(v) != 4:
            raise ValueError("a gain vector has exactly four entries")
        return cls(*v)


@dataclass(frozen=True)
class ControllerConfig:
    """Gain bounds and the speed-dependent shape of the nominal gait.

    Step length and torso lean are affine in the desired speed.  ``swing_lead``
    > 1 makes the swing leg reach forward early in the step.
    """

    lower_bounds: tuple = (-1.0, -2.0, 1.0, 1.0)
    upper_bounds: tuple = (1.0, 2.0, 500.0, 500.0)
    step_length_offset: float = 0.0
    step_length_slope: float = 0.4
    torso_lean: float = -0.08
    torso_lean_slope: float = 0.2
    clearance: float = 0.05
    stance_knee: float = 0.1
    swing_lead: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "lower_bounds", tuple(float(x) for x in self.lower_bounds))
        object.__setattr__(self, "upper_bounds", tuple(float(x) for x in self.upper_bounds))
        lo, hi = np.asarray(self.lower_bounds), np.asarray(self.upper_bounds)
        if lo.shape != (4,) or hi.shape != (4,) or np.any(lo >= hi):
            raise ValueError("gain bounds must be four pairs with lower < upper")
        if lo[2] <= 0 or lo[3] <= 0:
            raise ValueError("stiffness bounds must be positive")
        if self.clearance <= 0:
            raise ValueError("clearance must be positive")
        if self.swing_lead <= 0:
            raise ValueError("swing_lead must be positive")

    def step_length(self, speed: float) -> float:
        return self.step_length_offset + self.step_length_slope * speed

    def lean(self, speed: float) -> float:
        return self.torso_lean + self.torso_lean_slope * speed

    def contains(self, K: GainVector) -> bool:
        k = K.as_array()
        return bool(np.all(k >= np.asarray(self.lower_bounds)) and np.all(k <= np.asarray(self.upper_bounds)))


@dataclass
class GaitReference:
    coefficients: np.ndarray  # (4, DEGREE + 1), rows ordered as JOINTS
    theta_start: float
    theta_end: float
    step_length: float
    speed: float
    torso_pitch: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (4, DEGREE + 1):
            raise ValueError("expected a (4, 6) coefficient array")
        if not self.theta_end > self.theta_start:
            raise ValueError("theta_end must exceed theta_start")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("non-finite Bezier coefficients")

    def evaluate(self, s: float) -> np.ndarray:
        return _bezier(self.coefficients, float(s))

    def derivative(self, s: float) -> np.ndarray:
        return _bezier_ds(self.coefficients, float(s))


# ---------------------------------------------------------------------------
# kernels shared with the episode loop
# ---------------------------------------------------------------------------

@nb.njit(cache=True)
def _bezier(coeffs, s):
    n = coeffs.shape[1] - 1
    out = np.zeros(coeffs.shape[0])
    for k in range(n + 1):
        b = _binom(n, k) * s**k * (1.0 - s) ** (n - k)
        for j in range(coeffs.shape[0]):
            out[j] += coeffs[j, k] * b
    return out


@nb.njit(cache=True)
def _bezier_ds(coeffs, s):
    n = coeffs.shape[1] - 1
    out = np.zeros(coeffs.shape[0])
    for k in range(n):
        b = _binom(n - 1, k) * s**k * (1.0 - s) ** (n - 1 - k)
        for j in range(coeffs.shape[0]):
            out[j] += n * (coeffs[j, k + 1] - coeffs[j, k]) * b
    return out


@nb.njit(cache=True)
def _binom(n, k):
    r = 1.0
    for i in range(1, k + 1):
        r = r * (n - k + i) / i
    return r


@nb.njit(cache=True)
def _normalize(raw, start, end):
    s = (raw - start) / (end - start)
    if s < 0.0:
        return 0.0
    if s > 1.0:
        return 1.0
    return s


@nb.njit(cache=True)
def _targets(coeffs, s, k_fc, k_fp, speed_error):
    tgt = _bezier(coeffs, s)
    tgt[3] += k_fc * 4.0 * s * (1.0 - s)
    tgt[0] += k_fp * speed_error * s
    return tgt


@nb.njit(cache=True)
def _torques(tgt, joints, rates, k_hip, k_knee, d_hip, d_knee, limit):
    tau = np.empty(4)
    for j in range(4):
        if j % 2 == 0:
            tau[j] = k_hip * (tgt[j] - joints[j]) - d_hip * rates[j]
        else:
            tau[j] = k_knee * (tgt[j] - joints[j]) - d_knee * rates[j]
        if tau[j] > limit:
            tau[j] = limit
        elif tau[j] < -limit:
            tau[j] = -limit
    return tau


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def phase_variable(model: RobotModel, state: RobotState) -> float:
    """Horizontal offset of the hip pivot from the stance foot (m)."""
    _, _, _, C = _Tables.get(model)
    x, _, _, _ = _site(state.q[1:], state.dq[1:], C, 5)
    return float(x)


def normalize_phase(raw: float, ref: GaitReference) -> float:
    return float(_normalize(raw, ref.theta_start, ref.theta_end))


def reference_targets(ref: GaitReference, s: float, K: GainVector, speed_error: float) -> np.ndarray:
    """Joint targets (stance hip, stance knee, swing hip, swing knee) at phase ``s``."""
    return _targets(ref.coefficients, float(s), K.k_fc, K.k_fp, float(speed_error))


def motor_torques(model: RobotModel, targets, state: RobotState, K: GainVector,
                  damping: tuple[float, float] = (5.0, 5.0)) -> MotorCommand:
    joints = state.q[2:]
    rates = state.dq[2:]
    tau = _torques(np.asarray(targets, float), joints, rates, K.k_hip, K.k_knee,
                   damping[0], damping[1], model.torque_limit)
    return MotorCommand(tau)


# ---------------------------------------------------------------------------
# nominal gait synthesis
# ---------------------------------------------------------------------------

SPEED_RANGE = (0.05, 1.5)


def _leg_length(model: RobotModel, knee: float) -> float:
    a, b = model.thigh_length, model.shank_length
    return math.sqrt(a * a + b * b + 2 * a * b * math.cos(knee))


def _knee_for_length(model: RobotModel, r: float) -> float:
    a, b = model.thigh_length, model.shank_length
    c = (r * r - a * a - b * b) / (2 * a * b)
    return math.acos(min(1.0, max(-1.0, c)))


def _thigh_offset(model: RobotModel, knee: float) -> float:
    """Angle between the thigh and the hip-to-foot line for a given knee flexion."""
    a, b = model.thigh_length, model.shank_length
    return math.atan2(b * math.sin(knee), a + b * math.cos(knee))


def nominal_joint_curves(model: RobotModel, speed: float, cfg: ControllerConfig, s: np.ndarray):
    """Sampled nominal joint angles, shape (len(s), 4), plus the step geometry."""
    ell = cfg.step_length(speed)
    knee0 = cfg.stance_knee
    r = _leg_length(model, knee0)
    if not 0 < ell / 2 < r:
        raise ValueError(f"step length {ell} is not positive or exceeds leg reach")
    pitch = cfg.lean(speed)
    psi0 = math.asin(ell / (2 * r))
    out = np.empty((len(s), 4))
    for i, si in enumerate(s):
        phase = -ell / 2 + si * ell
        psi_st = math.asin(-phase / r)
        psi_sw = -psi0 * math.cos(math.pi * (1.0 - (1.0 - si) ** cfg.swing_lead))
        lift = cfg.clearance * math.sin(math.pi * si)
        r_sw = (r * math.cos(psi_st) - lift) / math.cos(psi_sw)
        knee_sw = _knee_for_length(model, r_sw)
        out[i, 0] = psi_st + _thigh_offset(model, knee0) + pitch
        out[i, 1] = knee0
        out[i, 2] = psi_sw + _thigh_offset(model, knee_sw) + pitch
        out[i, 3] = knee_sw
    return out, ell, pitch


def fit_bezier(s: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Least-squares degree-5 Bezier fit with the endpoints pinned exactly."""
    n = DEGREE
    basis = np.stack([math.comb(n, k) * s**k * (1 - s) ** (n - k) for k in range(n + 1)], axis=1)
    coeffs = np.empty((values.shape[1], n + 1))
    for j in range(values.shape[1]):
        c0, cn = values[0, j], values[-1, j]
        rhs = values[:, j] - basis[:, 0] * c0 - basis[:, n] * cn
        inner, *_ = np.linalg.lstsq(basis[:, 1:n], rhs, rcond=None)
        coeffs[j] = np.concatenate([[c0], inner, [cn]])
    return coeffs


def synthesize_reference(speed: float, model: RobotModel,
                         cfg: ControllerConfig = ControllerConfig()) -> GaitReference:
    """Deterministic nominal walking gait for ``speed`` (m/s).

    Stance leg keeps a fixed slight knee bend and sweeps rigidly through the step;
    the swing foot follows a sinusoidal leg-angle profile with a half-sine lift
    of ``cfg.clearance`` metres.
    """
    lo, hi = SPEED_RANGE
    if not lo <= speed <= hi:
        raise ValueError(f"desired speed {speed} outside [{lo}, {hi}] m/s")
    s = np.linspace(0.0, 1.0, 201)
    curves, ell, pitch = nominal_joint_curves(model, speed, cfg, s)
    coeffs = fit_bezier(s, curves)
    return GaitReference(coeffs, -ell / 2, ell / 2, ell, speed, torso_pitch=pitch)


# ---------------------------------------------------------------------------
# plain-text serialization
# ---------------------------------------------------------------------------

def dump_reference(ref: GaitReference) -> str:
    lines = [
        f"speed = {ref.speed!r}",
        f"theta_start = {ref.theta_start!r}",
        f"theta_end = {ref.theta_end!r}",
        f"step_length = {ref.step_length!r}",
        f"torso_pitch = {ref.torso_pitch!r}",
    ]
    for name, row in zip(JOINTS, ref.coefficients):
        lines.append(f"{name} = " + ", ".join(repr(float(c)) for c in row))
    return "\n".join(lines) + "\n"


def load_reference(text: str) -> GaitReference:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = val
    try:
        coeffs = np.array([[float(x) for x in values.pop(name).split(",")] for name in JOINTS])
        ref = GaitReference(
            coeffs,
            theta_start=float(values.pop("theta_start")),
            theta_end=float(values.pop("theta_end")),
            step_length=float(values.pop("step_length")),
            speed=float(values.pop("speed")),
            torso_pitch=float(values.pop("torso_pitch", "0.0")),
        )
    except KeyError as exc:
        raise ValueError(f"missing key {exc.args[0]!r}") from None
    if values:
        raise ValueError(f"unknown keys: {', '.join(sorted(values))}")
    return ref
