"""Planar five-link biped: pinned-stance dynamics, RK4 stepping, impacts, falls.

Link layout (indices used throughout the kernels)::

    0 torso        absolute pitch, positive leaning forward
    1 stance thigh
    2 stance shank
    3 swing thigh
    4 swing shank

Joint coordinates are ``q = (torso pitch, stance hip, stance knee, swing hip,
swing knee)``.  A leg link's absolute angle is measured from straight down,
positive when its distal end is ahead.  Hip flexion is ``thigh + pitch`` (zero
when thigh and torso are collinear) and knee flexion is ``thigh - shank``
(positive folds the shank backwards).  The stance foot is a pin at
``(x_stance, 0)``.

The heavy lifting lives in ``numba`` kernels operating on flat float arrays;
the dataclass wrappers below are the public surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np

NQ = 5
NJ = 4

# offsets into the packed parameter vector
_MT, _MTH, _MSH, _LT, _LTH, _LSH, _CT, _CTH, _CSH, _IT, _ITH, _ISH, _G, _TAU, _CLOSS = range(15)


@dataclass(frozen=True)
class RobotModel:
    torso_mass: float = 5.0
    thigh_mass: float = 1.0
    shank_mass: float = 0.5
    torso_length: float = 0.5
    thigh_length: float = 0.4
    shank_length: float = 0.4
    torso_com: float = 0.25
    thigh_com: float = 0.2
    shank_com: float = 0.2
    torso_inertia: float = 5.0 * 0.5**2 / 12
    thigh_inertia: float = 1.0 * 0.4**2 / 12
    shank_inertia: float = 0.5 * 0.4**2 / 12
    gravity: float = 9.81
    torque_limit: float = 30.0
    c_loss: float = 0.1

    def __post_init__(self):
        for name in ("torso_mass", "thigh_mass", "shank_mass", "torso_length", "thigh_length",
                     "shank_length", "torso_inertia", "thigh_inertia", "shank_inertia",
                     "torque_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.c_loss < 0 or self.gravity < 0:
            raise ValueError("c_loss and gravity must be non-negative")

    @property
    def total_mass(self) -> float:
        return self.torso_mass + 2 * (self.thigh_mass + self.shank_mass)

    @property
    def leg_length(self) -> float:
        return self.thigh_length + self.shank_length

    def packed(self) -> np.ndarray:
        return np.array([
            self.torso_mass, self.thigh_mass, self.shank_mass,
            self.torso_length, self.thigh_length, self.shank_length,
            self.torso_com, self.thigh_com, self.shank_com,
            self.torso_inertia, self.thigh_inertia, self.shank_inertia,
            self.gravity, self.torque_limit, self.c_loss,
        ])


@dataclass(frozen=True)
class FallThresholds:
    hip_height_fraction: float = 0.4
    max_pitch: float = 1.0


@dataclass
class RobotState:
    """Full hybrid state.  ``q[0]`` is the stance-foot x position; ``dq[0]`` is 0."""

    q: np.ndarray
    dq: np.ndarray
    stance: str = "left"
    t: float = 0.0
    energy: float = 0.0
    displacement: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.dq = np.asarray(self.dq, dtype=float)
        if self.q.shape != (6,) or self.dq.shape != (6,):
            raise ValueError("q and dq must have 6 entries")
        if self.stance not in ("left", "right"):
            raise ValueError("stance must be 'left' or 'right'")

    @property
    def joints(self) -> np.ndarray:
        return self.q[1:]

    @property
    def joint_rates(self) -> np.ndarray:
        return self.dq[1:]

    def copy(self) -> "RobotState":
        return replace(self, q=self.q.copy(), dq=self.dq.copy())


@dataclass(frozen=True)
class MotorCommand:
    """Torques at (stance hip, stance knee, swing hip, swing knee)."""

    torques: np.ndarray = field(default_factory=lambda: np.zeros(NJ))

    def __post_init__(self):
        object.__setattr__(self, "torques", np.asarray(self.torques, dtype=float).reshape(NJ))


@dataclass(frozen=True)
class HybridEvent:
    kind: str = "none"  # none | touchdown | fall
    foot_x: float = math.nan
    time: float = math.nan

    @property
    def is_touchdown(self) -> bool:
        return self.kind == "touchdown"


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@nb.njit(cache=True)
def _coefficients(p):
    """Link coefficient table: a point is ``sum_j C[k, j] * g_j(phi_j)``.

    Rows 0-4 are the link centres of mass, row 5 the hip, row 6 the swing foot,
    row 7 the stance knee.  Column 0 uses the upward unit vector (sin, cos),
    columns 1-4 the downward one (sin, -cos).
    """
    lt, lsh = p[_LTH], p[_LSH]
    C = np.zeros((8, NQ))
    C[0, 0] = p[_CT]
    C[0, 1] = -lt
    C[0, 2] = -lsh
    C[1, 1] = -lt + p[_CTH]
    C[1, 2] = -lsh
    C[2, 2] = -lsh + p[_CSH]
    C[3, 1] = -lt
    C[3, 2] = -lsh
    C[3, 3] = p[_CTH]
    C[4, 1] = -lt
    C[4, 2] = -lsh
    C[4, 3] = lt
    C[4, 4] = p[_CSH]
    C[5, 1] = -lt
    C[5, 2] = -lsh
    C[6, 1] = -lt
    C[6, 2] = -lsh
    C[6, 3] = lt
    C[6, 4] = lsh
    C[7, 2] = -lsh
    return C


@nb.njit(cache=True)
def _mass_tables(p):
    """Mass-weighted coefficient products ``W`` and first moments ``w``."""
    C = _coefficients(p)
    m = np.array([p[_MT], p[_MTH], p[_MSH], p[_MTH], p[_MSH]])
    W = np.zeros((NQ, NQ))
    w = np.zeros(NQ)
    for i in range(NQ):
        for j in range(NQ):
            w[j] += m[i] * C[i, j]
            for k in range(NQ):
                W[j, k] += m[i] * C[i, j] * C[i, k]
    return W, w, C


@nb.njit(cache=True)
def _link_angles(q):
    phi = np.empty(NQ)
    phi[0] = q[0]
    phi[1] = q[1] - q[0]
    phi[2] = q[1] - q[0] - q[2]
    phi[3] = q[3] - q[0]
    phi[4] = q[3] - q[0] - q[4]
    return phi


@nb.njit(cache=True)
def _link_rates(dq):
    return _link_angles(dq)


@nb.njit(cache=True)
def _unit_vectors(phi):
    """g_j, dg_j/dphi_j for each link as (NQ, 2) arrays."""
    g = np.empty((NQ, 2))
    dg = np.empty((NQ, 2))
    s, c = math.sin(phi[0]), math.cos(phi[0])
    g[0, 0] = s
    g[0, 1] = c
    dg[0, 0] = c
    dg[0, 1] = -s
    for j in range(1, NQ):
        s, c = math.sin(phi[j]), math.cos(phi[j])
        g[j, 0] = s
        g[j, 1] = -c
        dg[j, 0] = c
        dg[j, 1] = s
    return g, dg


@nb.njit(cache=True)
def _point(C, row, g):
    x = 0.0
    y = 0.0
    for j in range(NQ):
        x += C[row, j] * g[j, 0]
        y += C[row, j] * g[j, 1]
    return x, y


@nb.njit(cache=True)
def _point_velocity(C, row, dg, dphi):
    vx = 0.0
    vy = 0.0
    for j in range(NQ):
        vx += C[row, j] * dg[j, 0] * dphi[j]
        vy += C[row, j] * dg[j, 1] * dphi[j]
    return vx, vy


@nb.njit(cache=True)
def _phi_terms(q, dq, p, W, w):
    """Mass matrix and bias vector (Coriolis + gravity) in link-angle coordinates."""
    phi = _link_angles(q)
    dphi = _link_rates(dq)
    g, dg = _unit_vectors(phi)
    inertia = np.array([p[_IT], p[_ITH], p[_ISH], p[_ITH], p[_ISH]])
    M = np.empty((NQ, NQ))
    h = np.zeros(NQ)
    for j in range(NQ):
        for k in range(NQ):
            M[j, k] = W[j, k] * (dg[j, 0] * dg[k, 0] + dg[j, 1] * dg[k, 1])
            h[j] -= W[j, k] * (dg[j, 0] * g[k, 0] + dg[j, 1] * g[k, 1]) * dphi[k] * dphi[k]
        M[j, j] += inertia[j]
        h[j] += p[_G] * w[j] * dg[j, 1]
    return M, h


_T = np.array([
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [-1.0, 1.0, 0.0, 0.0, 0.0],
    [-1.0, 1.0, -1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0, 1.0, 0.0],
    [-1.0, 0.0, 0.0, 1.0, -1.0],
])


@nb.njit(cache=True)
def _joint_terms(q, dq, p, W, w):
    """Mass matrix M(q) and bias h(q, dq) in joint coordinates."""
    Mp, hp = _phi_terms(q, dq, p, W, w)
    T = _T
    M = T.T @ Mp @ T
    h = T.T @ hp
    return M, h


@nb.njit(cache=True)
def _cholesky_solve(A, b):
    n = A.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return np.full(n, np.nan)
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@nb.njit(cache=True)
def _power(tau, omega, c_loss):
    P = 0.0
    for j in range(NJ):
        mech = tau[j] * omega[j]
        if mech > 0.0:
            P += mech
        P += c_loss * tau[j] * tau[j]
    return P


@nb.njit(cache=True)
def _deriv(y, tau, p, W, w):
    """Time derivative of the packed state ``y = (q[5], dq[5], E)``."""
    q = y[:NQ]
    dq = y[NQ:2 * NQ]
    M, h = _joint_terms(q, dq, p, W, w)
    rhs = -h
    for j in range(NJ):
        rhs[j + 1] += tau[j]
    ddq = _cholesky_solve(M, rhs)
    out = np.empty(2 * NQ + 1)
    out[:NQ] = dq
    out[NQ:2 * NQ] = ddq
    out[2 * NQ] = _power(tau, dq[1:], p[_CLOSS])
    return out


@nb.njit(cache=True)
def _rk4(y, tau, dt, p, W, w):
    k1 = _deriv(y, tau, p, W, w)
    k2 = _deriv(y + 0.5 * dt * k1, tau, p, W, w)
    k3 = _deriv(y + 0.5 * dt * k2, tau, p, W, w)
    k4 = _deriv(y + dt * k3, tau, p, W, w)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@nb.njit(cache=True)
def _site(q, dq, C, row):
    """Position and velocity (relative to the stance foot) of a coefficient-table row."""
    phi = _link_angles(q)
    g, dg = _unit_vectors(phi)
    x, y = _point(C, row, g)
    vx, vy = _point_velocity(C, row, dg, _link_rates(dq))
    return x, y, vx, vy


@nb.njit(cache=True)
def _mechanical_energy(q, dq, p, W, w):
    Mp, _ = _phi_terms(q, dq * 0.0, p, W, w)
    dphi = _link_rates(dq)
    ke = 0.5 * dphi @ Mp @ dphi
    phi = _link_angles(q)
    g, _ = _unit_vectors(phi)
    pe = 0.0
    for j in range(NQ):
        pe += p[_G] * w[j] * g[j, 1]
    return ke, pe


@nb.njit(cache=True)
def _impact(q, dq, p, W, w, C):
    """Plastic swing-foot impact.  Returns relabelled (q, dq) and the foot x offset."""
    phi = _link_angles(q)
    g, dg = _unit_vectors(phi)
    Mp, _ = _phi_terms(q, dq * 0.0, p, W, w)
    T = _T
    mtot = p[_MT] + 2.0 * (p[_MTH] + p[_MSH])
    n = NQ + 2
    Me = np.zeros((n, n))
    Me[0, 0] = mtot
    Me[1, 1] = mtot
    # base/link coupling in link coordinates, then mapped through T
    A = np.zeros((2, NQ))
    Jf = np.zeros((2, NQ))
    for j in range(NQ):
        A[0, j] = w[j] * dg[j, 0]
        A[1, j] = w[j] * dg[j, 1]
        Jf[0, j] = C[6, j] * dg[j, 0]
        Jf[1, j] = C[6, j] * dg[j, 1]
    Aq = A @ T
    Jq = Jf @ T
    Mq = T.T @ Mp @ T
    for i in range(2):
        for j in range(NQ):
            Me[i, 2 + j] = Aq[i, j]
            Me[2 + j, i] = Aq[i, j]
    Me[2:, 2:] = Mq
    K = np.zeros((n + 2, n + 2))
    K[:n, :n] = Me
    for i in range(2):
        K[n + i, 0] = 1.0 if i == 0 else 0.0
        K[n + i, 1] = 1.0 if i == 1 else 0.0
        K[0 + i, n + i] = -1.0
        for j in range(NQ):
            K[n + i, 2 + j] = Jq[i, j]
            K[2 + j, n + i] = -Jq[i, j]
    ve = np.zeros(n)
    ve[2:] = dq
    rhs = np.zeros(n + 2)
    rhs[:n] = Me @ ve
    sol = np.linalg.solve(K, rhs)
    dq_plus = sol[2:n]
    q_new = np.empty(NQ)
    dq_new = np.empty(NQ)
    q_new[0] = q[0]
    q_new[1] = q[3]
    q_new[2] = q[4]
    q_new[3] = q[1]
    q_new[4] = q[2]
    dq_new[0] = dq_plus[0]
    dq_new[1] = dq_plus[3]
    dq_new[2] = dq_plus[4]
    dq_new[3] = dq_plus[1]
    dq_new[4] = dq_plus[2]
    fx, _ = _point(C, 6, g)
    return q_new, dq_new, fx


@nb.njit(cache=True)
def _is_fallen(q, dq, C, hip_min, max_pitch):
    for j in range(NQ):
        if not (math.isfinite(q[j]) and math.isfinite(dq[j])):
            return True
    phi = _link_angles(q)
    g, _ = _unit_vectors(phi)
    _, hy = _point(C, 5, g)
    return hy < hip_min or abs(q[0]) > max_pitch


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------

class _Tables:
    """Per-model constant tables, cached by parameter bytes."""

    _cache: dict = {}

    @classmethod
    def get(cls, model: RobotModel):
        key = model.packed().tobytes()
        hit = cls._cache.get(key)
        if hit is None:
            p = model.packed()
            W, w, C = _mass_tables(p)
            hit = (p, W, w, C)
            cls._cache[key] = hit
        return hit


def _pack(state: RobotState) -> np.ndarray:
    return np.concatenate([state.q[1:], state.dq[1:], [state.energy]])


def mass_matrix(model: RobotModel, joints) -> np.ndarray:
    p, W, w, _ = _Tables.get(model)
    q = np.asarray(joints, dtype=float)
    M, _ = _joint_terms(q, np.zeros(NQ), p, W, w)
    return M


def bias_forces(model: RobotModel, joints, rates) -> np.ndarray:
    """Coriolis, centrifugal and gravity terms h(q, dq) in M ddq + h = B tau."""
    p, W, w, _ = _Tables.get(model)
    _, h = _joint_terms(np.asarray(joints, float), np.asarray(rates, float), p, W, w)
    return h


def continuous_dynamics(model: RobotModel, state: RobotState, cmd: MotorCommand):
    """Return ``(dq, ddq, power)`` for the pinned-stance flow.

    ``dq`` and ``ddq`` use the 6-entry layout of :class:`RobotState`; the stance
    foot entry is always zero.
    """
    p, W, w, _ = _Tables.get(model)
    d = _deriv(_pack(state), cmd.torques, p, W, w)
    if not np.all(np.isfinite(d[NQ:2 * NQ])):
        raise np.linalg.LinAlgError("mass matrix is not positive definite")
    dq = np.concatenate([[0.0], d[:NQ]])
    ddq = np.concatenate([[0.0], d[NQ:2 * NQ]])
    return dq, ddq, float(d[2 * NQ])


def electrical_power(model: RobotModel, cmd: MotorCommand, joint_rates) -> float:
    """Positive mechanical power plus copper loss, no regeneration."""
    return float(_power(cmd.torques, np.asarray(joint_rates, dtype=float), model.c_loss))


def hip_position(model: RobotModel, state: RobotState) -> tuple[float, float]:
    _, _, _, C = _Tables.get(model)
    x, y, _, _ = _site(state.q[1:], state.dq[1:], C, 5)
    return state.q[0] + x, y


def swing_foot(model: RobotModel, state: RobotState) -> tuple[float, float, float, float]:
    """Swing-foot (x, height, vx, vy); x is absolute."""
    _, _, _, C = _Tables.get(model)
    x, y, vx, vy = _site(state.q[1:], state.dq[1:], C, 6)
    return state.q[0] + x, y, vx, vy


def mechanical_energy(model: RobotModel, state: RobotState) -> float:
    p, W, w, _ = _Tables.get(model)
    ke, pe = _mechanical_energy(state.q[1:], state.dq[1:], p, W, w)
    return float(ke + pe)


def kinetic_energy(model: RobotModel, state: RobotState) -> float:
    p, W, w, _ = _Tables.get(model)
    ke, _ = _mechanical_energy(state.q[1:], state.dq[1:], p, W, w)
    return float(ke)


def _unpack(y: np.ndarray, like: RobotState, t: float, model: RobotModel) -> RobotState:
    out = RobotState(
        q=np.concatenate([[like.q[0]], y[:NQ]]),
        dq=np.concatenate([[0.0], y[NQ:2 * NQ]]),
        stance=like.stance,
        t=t,
        energy=float(y[2 * NQ]),
        displacement=like.displacement,
    )
    hx_old, _ = hip_position(model, like)
    hx_new, _ = hip_position(model, out)
    out.displacement = like.displacement + (hx_new - hx_old)
    return out


def step_integrate(model: RobotModel, state: RobotState, cmd: MotorCommand, dt: float) -> RobotState:
    """One classical RK4 step with the torques held over the interval."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    p, W, w, _ = _Tables.get(model)
    y = _rk4(_pack(state), cmd.torques, dt, p, W, w)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("integration produced a non-finite state")
    return _unpack(y, state, state.t + dt, model)


def detect_touchdown(model: RobotModel, before: RobotState, after: RobotState,
                     cmd: MotorCommand | None = None, tol: float = 1e-8) -> HybridEvent:
    """Report a touchdown when the swing foot crosses the ground ahead of the stance foot.

    The impact instant is refined by bisection on the sub-step length, re-integrating
    from ``before`` with the same held torques.
    """
    _, h0, _, _ = swing_foot(model, before)
    x1, h1, _, vy1 = swing_foot(model, after)
    if not (h0 > 0.0 and h1 <= 0.0 and x1 > after.q[0] and vy1 < 0.0):
        return HybridEvent()
    if cmd is None:
        return HybridEvent("touchdown", foot_x=x1, time=after.t)
    lo, hi = 0.0, after.t - before.t
    hit = after
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        trial = step_integrate(model, before, cmd, mid)
        _, h, _, _ = swing_foot(model, trial)
        hit = trial
        if abs(h) < tol:
            break
        if h > 0:
            lo = mid
        else:
            hi = mid
    fx, _, _, _ = swing_foot(model, hit)
    return HybridEvent("touchdown", foot_x=fx, time=hit.t)


def impact_map(model: RobotModel, state: RobotState) -> RobotState:
    """Plastic impact at the swing foot followed by stance/swing relabelling."""
    p, W, w, C = _Tables.get(model)
    q_new, dq_new, fx = _impact(state.q[1:].copy(), state.dq[1:].copy(), p, W, w, C)
    return RobotState(
        q=np.concatenate([[state.q[0] + fx], q_new]),
        dq=np.concatenate([[0.0], dq_new]),
        stance="right" if state.stance == "left" else "left",
        t=state.t,
        energy=state.energy,
        displacement=state.displacement,
    )


def detect_fall(model: RobotModel, state: RobotState,
                thresholds: FallThresholds = FallThresholds()) -> bool:
    _, _, _, C = _Tables.get(model)
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.dq))):
        return True
    hip_min = thresholds.hip_height_fraction * model.leg_length
    return bool(_is_fallen(state.q[1:], state.dq[1:], C, hip_min, thresholds.max_pitch))


def mirrored(state: RobotState) -> RobotState:
    """Reflect x -> -x: every angle and rate changes sign."""
    out = state.copy()
    out.q[1:] *= -1
    out.dq[1:] *= -1
    out.q[0] *= -1
    return out


TRAJECTORY_COLUMNS = (
    ["t"] + [f"q{i}" for i in range(6)] + [f"dq{i}" for i in range(6)]
    + [f"tau{i}" for i in range(4)] + ["E_elec"]
)
