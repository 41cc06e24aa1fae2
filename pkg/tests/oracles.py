"""Independent reference computations used by the tests.

Nothing here imports the kernels under test: forward kinematics is written out
link by link with plain trigonometry, derivatives come from complex-step
differentiation, and momentum balances are assembled from the kinematics.
"""

from __future__ import annotations

import numpy as np

H = 1e-30  # complex-step size

# body indices in the pre-impact labelling
TORSO, ST_THIGH, ST_SHANK, SW_THIGH, SW_SHANK = range(5)


def link_angles(q):
    """Absolute link angles from joint coordinates (pitch, h_st, k_st, h_sw, k_sw)."""
    th, hs, ks, hw, kw = q
    return th, hs - th, hs - th - ks, hw - th, hw - th - kw


def down(phi):
    return np.array([np.sin(phi), -np.cos(phi)])


def up(phi):
    return np.array([np.sin(phi), np.cos(phi)])


def kinematics(model, q):
    """Points of interest relative to the stance foot (works for complex ``q``)."""
    th, p1, p2, p3, p4 = link_angles(q)
    Lt, Ls = model.thigh_length, model.shank_length
    foot = np.zeros(2, dtype=complex)
    knee = foot - Ls * down(p2)
    hip = knee - Lt * down(p1)
    sw_knee = hip + Lt * down(p3)
    sw_foot = sw_knee + Ls * down(p4)
    com = [
        hip + model.torso_com * up(th),
        hip + model.thigh_com * down(p1),
        knee + model.shank_com * down(p2),
        hip + model.thigh_com * down(p3),
        sw_knee + model.shank_com * down(p4),
    ]
    return {"foot": foot, "knee": knee, "hip": hip, "sw_knee": sw_knee,
            "sw_foot": sw_foot, "com": com, "phi": (th, p1, p2, p3, p4)}


def masses(model):
    return [model.torso_mass, model.thigh_mass, model.shank_mass, model.thigh_mass, model.shank_mass]


def inertias(model):
    return [model.torso_inertia, model.thigh_inertia, model.shank_inertia,
            model.thigh_inertia, model.shank_inertia]


def potential(model, q):
    k = kinematics(model, q)
    return sum(m * model.gravity * c[1] for m, c in zip(masses(model), k["com"]))


def gravity_vector(model, q):
    """dV/dq by complex step; G(q) of the manipulator equation."""
    q = np.asarray(q, dtype=float)
    out = np.empty(5)
    for i in range(5):
        dq = np.zeros(5, dtype=complex)
        dq[i] = 1j * H
        out[i] = potential(model, q + dq).imag / H
    return out


def point_velocity(model, q, dq, getter):
    """d/dt of a kinematic point along direction dq (complex step)."""
    q = np.asarray(q, dtype=float)
    return np.array(getter(kinematics(model, q + 1j * H * np.asarray(dq)))).imag / H


def total_com_x(model, q):
    k = kinematics(model, np.asarray(q, dtype=complex))
    m = masses(model)
    return float(sum(mi * c[0].real for mi, c in zip(m, k["com"])) / sum(m))


def lumped_pendulum(model, q):
    """Total mass, pivot-to-COM distance vector and pivot inertia of the rigid robot."""
    k = kinematics(model, np.asarray(q, dtype=complex))
    m = masses(model)
    mt = sum(m)
    com = sum(mi * c.real for mi, c in zip(m, k["com"])) / mt
    I = sum(Ii + mi * float(np.dot(c.real, c.real)) for mi, Ii, c in zip(m, inertias(model), k["com"]))
    return mt, com, I


def _cross(r, v):
    return r[0] * v[1] - r[1] * v[0]


def angular_momentum(model, q, dq, about, bodies, base_velocity=(0.0, 0.0)):
    """Angular momentum of ``bodies`` about a named point, absolute velocities.

    Velocities are relative to the stance foot plus ``base_velocity``.
    """
    q = np.asarray(q, dtype=float)
    k = kinematics(model, q.astype(complex))
    vb = np.asarray(base_velocity, dtype=float)
    origin = np.array(k[about]).real
    phi_dot = link_angles(np.asarray(dq, dtype=float))
    m, I = masses(model), inertias(model)
    L = 0.0
    for b in bodies:
        r = k["com"][b].real - origin
        v = point_velocity(model, q, dq, lambda kk, b=b: kk["com"][b]) + vb
        # torso angle grows clockwise, leg angles counter-clockwise
        spin = -phi_dot[b] if b == TORSO else phi_dot[b]
        L += m[b] * _cross(r, v) + I[b] * spin
    return L


RELABEL = [TORSO, SW_THIGH, SW_SHANK, ST_THIGH, ST_SHANK]  # post index -> pre index


def impact_balances(model, q_pre, dq_pre, q_post, dq_post):
    """Residuals of the five momentum balances that define a plastic impact.

    Pre-impact velocities are about the old stance foot (pinned), post-impact
    about the new one (the old swing foot).  Each balance is expressed with
    pre-impact body indices.
    """
    post_of = {pre: post for post, pre in enumerate(RELABEL)}

    def post_H(about_pre, bodies_pre):
        names = {"hip": "hip", "sw_foot": "foot", "sw_knee": "knee", "knee": "sw_knee"}
        return angular_momentum(model, q_post, dq_post, names[about_pre], [post_of[b] for b in bodies_pre])

    checks = [
        ("sw_foot", [0, 1, 2, 3, 4]),  # whole robot about the impact point
        ("hip", [TORSO]),
        ("knee", [ST_SHANK]),
        ("hip", [ST_THIGH, ST_SHANK]),
        ("sw_knee", [TORSO, ST_THIGH, ST_SHANK, SW_THIGH]),
    ]
    out = []
    for about, bodies in checks:
        before = angular_momentum(model, q_pre, dq_pre, about, bodies)
        after = post_H(about, bodies)
        out.append(after - before)
    return np.array(out)


def kinetic_energy(model, q, dq):
    q = np.asarray(q, dtype=float)
    phi_dot = link_angles(np.asarray(dq, dtype=float))
    m, I = masses(model), inertias(model)
    T = 0.0
    for b in range(5):
        v = point_velocity(model, q, dq, lambda kk, b=b: kk["com"][b])
        T += 0.5 * m[b] * float(v @ v) + 0.5 * I[b] * phi_dot[b] ** 2
    return T


def cost_oracle(fell, t_fall, cot, avg, v_des, t_sim=7.0):
    """Episode cost written directly from the published formula."""
    if fell:
        return 100 + 20 * (t_sim - t_fall)
    dv = avg - v_des
    return 30 * cot + 1000 * (dv * dv)
