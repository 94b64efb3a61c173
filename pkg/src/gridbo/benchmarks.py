"""Benchmark plants: an unbalanced disk and a two-link planar robot arm.

Each benchmark provides a nonlinear simulation model, an LFR of its local
linear dynamics and a generalized plant with weighting filters for
controller synthesis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .lfr import DeltaBlock, DeltaStructure, LfrPlant, affine_lfr
from .lti import StateSpaceModel


@dataclass(frozen=True)
class NonlinearModel:
    """``xdot = f(t, x, u)``, ``y = h(x)``; ``eta`` maps state to scheduling values."""

    name: str
    n_x: int
    n_u: int
    n_y: int
    f: Callable
    h: Callable
    params: dict = field(default_factory=dict)
    eta: Callable | None = None


def first_order(num1: float, num0: float, pole: float) -> StateSpaceModel:
    """Realization of ``(num1 s + num0) / (s + pole)``."""
    return StateSpaceModel([[-pole]], [[1.0]], [[num0 - num1 * pole]], [[num1]])


# ---------------------------------------------------------------- unbalanced disk

DISK = dict(M=7e-2, g=9.8, l=4.2e-2, J=2.2e-4, tau=5.971e-1, Km=1.531e1,
            w_M=0.042, p_hat=0.39, w_p=0.61)


def disk_coefficients(params: dict | None = None):
    p = dict(DISK, **(params or {}))
    return p["g"] * p["l"] / p["J"], 1.0 / p["tau"], p["Km"] / p["tau"]


DISK_FILTERS = {
    "z1": (0.5012, 8.3818, 0.8382),
    "z2": (10.0, 34.8219, 1101.2),
    "r": (0.0, 2.282, 0.7216),
    "di": (0.0, 0.0144, 0.1443),
}


def disk_filter(name: str) -> StateSpaceModel:
    return first_order(*DISK_FILTERS[name])


def disk_structure() -> DeltaStructure:
    return DeltaStructure((DeltaBlock("delta1", 1), DeltaBlock("delta2", 2)))


DISK_REPLICATION = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def unbalanced_disk_lfr(params: dict | None = None) -> LfrPlant:
    """Disk dynamics with uncertain mass ``delta1`` and sinc factor ``delta2``.

    The stiffness ``c1 (M_hat + w_M d1)(p_hat + w_p d2)`` is pulled out as
    ``Delta = diag(d1, d2, d2)`` acting on ``(x1, x1, w_delta1)``.
    """
    p = dict(DISK, **(params or {}))
    c1, c2, c3 = disk_coefficients(p)
    M, wM, ph, wp = p["M"], p["w_M"], p["p_hat"], p["w_p"]
    A = np.array([[0.0, 1.0], [-c1 * M * ph, -c2]])
    B = np.array([[0.0, 0.0, 0.0, 0.0],
                  [-c1 * wM * ph, -c1 * M * wp, -c1 * wM * wp, c3]])
    C = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    D = np.zeros((3, 4))
    D[1, 0] = 1.0
    G = StateSpaceModel(A, B, C, D, {"delta": (0, 3), "u": (3, 1)},
                        {"delta": (0, 2), "y": (2, 1)})
    return LfrPlant(G, disk_structure(), "robust", DISK_REPLICATION)


def unbalanced_disk_genplant(params: dict | None = None) -> LfrPlant:
    """Generalized plant ``(delta, w=(w_r, w_di), u) -> (delta, z=(z1, z2), y=e)``.

    ``e = W_r w_r - G (W_di w_di + u)``, ``z1 = W_z1 e``, ``z2 = W_z2 u``.
    State order: disk ``(x1, x2)``, then the ``W_r``, ``W_di``, ``W_z1`` and
    ``W_z2`` filter states.
    """
    p = dict(DISK, **(params or {}))
    c1, c2, c3 = disk_coefficients(p)
    M, wM, ph, wp = p["M"], p["w_M"], p["p_hat"], p["w_p"]
    fr, fd, f1, f2 = (disk_filter(k) for k in ("r", "di", "z1", "z2"))
    cr, cd = fr.C[0, 0], fd.C[0, 0]
    c_z1, d_z1 = f1.C[0, 0], f1.D[0, 0]
    c_z2, d_z2 = f2.C[0, 0], f2.D[0, 0]

    n = 6
    A = np.zeros((n, n))
    A[0, 1] = 1.0
    A[1, 0], A[1, 1], A[1, 3] = -c1 * M * ph, -c2, c3 * cd
    A[2, 2] = fr.A[0, 0]
    A[3, 3] = fd.A[0, 0]
    A[4, 4] = f1.A[0, 0]
    A[4, 0], A[4, 2] = -1.0, cr          # W_z1 driven by e = r - x1
    A[5, 5] = f2.A[0, 0]

    # inputs: w_delta (3), w_r, w_di, u
    B = np.zeros((n, 6))
    B[1, :3] = [-c1 * wM * ph, -c1 * M * wp, -c1 * wM * wp]
    B[1, 5] = c3
    B[2, 3] = 1.0
    B[3, 4] = 1.0
    B[5, 5] = 1.0

    # outputs: z_delta (3, replicated), z1, z2, e
    C = np.zeros((6, n))
    D = np.zeros((6, 6))
    C[0, 0] = C[1, 0] = 1.0
    D[2, 0] = 1.0
    C[3, 0], C[3, 2], C[3, 4] = -d_z1, d_z1 * cr, c_z1
    C[4, 5] = c_z2
    D[4, 5] = d_z2
    C[5, 0], C[5, 2] = -1.0, cr
    G = StateSpaceModel(A, B, C, D, {"delta": (0, 3), "w": (3, 2), "u": (5, 1)},
                        {"delta": (0, 3), "z": (3, 2), "y": (5, 1)})
    return LfrPlant(G, disk_structure(), "robust")


def disk_point_from_mass(mass: float, p: float | None = None, params: dict | None = None):
    """Uncertainty coordinates ``(delta1, delta2)`` for a mass and sinc value."""
    q = dict(DISK, **(params or {}))
    d1 = (mass - q["M"]) / q["w_M"]
    d2 = 0.0 if p is None else (p - q["p_hat"]) / q["w_p"]
    return np.array([d1, d2])


def unbalanced_disk_model(mass: float | None = None, params: dict | None = None) -> NonlinearModel:
    """Nonlinear disk with input ``(u, d)``: voltage plus input disturbance."""
    p = dict(DISK, **(params or {}))
    c1, c2, c3 = disk_coefficients(p)
    m = p["M"] if mass is None else float(mass)

    def f(t, x, u):
        return np.array([x[1], -m * c1 * np.sin(x[0]) - c2 * x[1] + c3 * u[0]])

    def h(x):
        return x[:1]

    return NonlinearModel("unbalanced_disk", 2, 1, 1, f, h, dict(p, M=m))


# ---------------------------------------------------------------- robot arm

ARM = dict(a=5.6794, b=1.473, c=1.7985, d=0.4, e=0.4, f=2.0, n=1.0)


def arm_mass_matrix(q, params: dict | None = None) -> np.ndarray:
    p = dict(ARM, **(params or {}))
    cd = np.cos(q[0] - q[1])
    return np.array([[p["a"], p["b"] * cd], [p["b"] * cd, p["c"]]])


def arm_dynamics(x, u, params: dict | None = None) -> np.ndarray:
    """``qdd = M(q)^-1 (n u - C(q, qd) - g(q))`` with ``g = (-d sin q1, -e sin q2)``."""
    p = dict(ARM, **(params or {}))
    q1, q2, w1, w2 = x
    sd, cd = np.sin(q1 - q2), np.cos(q1 - q2)
    a, b, c, f = p["a"], p["b"], p["c"], p["f"]
    cor = np.array([b * sd * w2 ** 2 + f * w1, -b * sd * w1 ** 2 + f * (w2 - w1)])
    grav = np.array([-p["d"] * np.sin(q1), -p["e"] * np.sin(q2)])
    rhs = p["n"] * np.asarray(u, float) - cor - grav
    h = a * c - (b * cd) ** 2
    qdd = np.array([c * rhs[0] - b * cd * rhs[1], -b * cd * rhs[0] + a * rhs[1]]) / h
    return np.array([w1, w2, qdd[0], qdd[1]])


def _sinc(x):
    return np.sinc(x / np.pi)


def arm_scheduling(x, params: dict | None = None) -> np.ndarray:
    """Ten scheduling variables ``p = eta(x)`` of the quasi-LPV embedding."""
    p = dict(ARM, **(params or {}))
    a, b, c, f = p["a"], p["b"], p["c"], p["f"]
    q1, q2, w1, w2 = x
    sd, cd = np.sin(q1 - q2), np.cos(q1 - q2)
    h = a * c - (b * cd) ** 2
    s1, s2 = _sinc(q1), _sinc(q2)
    return np.array([
        1.0,
        cd,
        s1,
        cd * s2,
        -b * b * sd * cd * w1 - (c + b * cd) * f,
        -c * sd * w2 + cd * f,
        cd * s1,
        s2,
        a * b * sd * w1 + f * (a + b * cd),
        b * b * sd * cd * w2 - a * f,
    ]) / h


def arm_lpv_matrices(p, params: dict | None = None):
    """``A(p)``, ``B(p)`` of the quasi-LPV model."""
    q = dict(ARM, **(params or {}))
    a, b, c, d, e, n = q["a"], q["b"], q["c"], q["d"], q["e"], q["n"]
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    A[2] = [c * d * p[2], -b * e * p[3], p[4], b * p[5]]
    A[3] = [-b * d * p[6], a * e * p[7], p[8], p[9]]
    B = np.zeros((4, 2))
    B[2] = [c * n * p[0], -b * n * p[1]]
    B[3] = [-b * n * p[1], a * n * p[0]]
    return A, B


def robot_arm_model(params: dict | None = None) -> NonlinearModel:
    p = dict(ARM, **(params or {}))
    return NonlinearModel("robot_arm", 4, 2, 2, lambda t, x, u: arm_dynamics(x, u, p),
                          lambda x: x[:2], p, lambda x: arm_scheduling(x, p))


ARM_FILTERS = {"W1": (0.5, 5.0, 5e-5), "W2": 3e-3, "W3": (0.0, 1e3, 1e3)}


def robot_arm_genplant_nominal(params: dict | None = None) -> StateSpaceModel:
    """Generalized plant at ``p = 0``; scheduling enters through :func:`robot_arm_genplant`.

    Inputs ``w = (r, d)`` and ``u``; outputs ``z = (W1 e, W2 u)`` and
    ``y = e = r - q``.  The torque is ``u + W3 d``.  States: arm (4),
    ``W1`` (2), ``W3`` (2).
    """
    A0, B0 = arm_lpv_matrices(np.zeros(10), params)
    w1, w3 = first_order(*ARM_FILTERS["W1"]), first_order(*ARM_FILTERS["W3"])
    w2 = ARM_FILTERS["W2"]
    n = 8
    A = np.zeros((n, n))
    A[:4, :4] = A0
    A[4:6, 4:6] = w1.A[0, 0] * np.eye(2)
    A[6:8, 6:8] = w3.A[0, 0] * np.eye(2)
    A[4:6, :2] = -np.eye(2)               # W1 driven by e = r - q
    A[:4, 6:8] = B0 * w3.C[0, 0]
    B = np.zeros((n, 6))
    B[4:6, 0:2] = np.eye(2)
    B[6:8, 2:4] = np.eye(2)
    B[:4, 4:6] = B0
    C = np.zeros((6, n))
    D = np.zeros((6, 6))
    C[0:2, 4:6] = w1.C[0, 0] * np.eye(2)
    C[0:2, :2] = -w1.D[0, 0] * np.eye(2)
    D[0:2, 0:2] = w1.D[0, 0] * np.eye(2)
    D[2:4, 4:6] = w2 * np.eye(2)
    C[4:6, :2] = -np.eye(2)
    D[4:6, 0:2] = np.eye(2)
    return StateSpaceModel(A, B, C, D, {"w": (0, 4), "u": (4, 2)}, {"z": (0, 4), "y": (4, 2)})


def _arm_term(i, params):
    """Coefficient of ``p_i`` in ``[[A, B], [C, D]]`` of the generalized plant."""
    e = np.zeros(10)
    e[i] = 1.0
    Ai, Bi = arm_lpv_matrices(e, params)
    Ai[0, 2] = Ai[1, 3] = 0.0
    w3 = first_order(*ARM_FILTERS["W3"])
    M = np.zeros((8 + 6, 8 + 6))
    M[:4, :4] = Ai
    M[:4, 6:8] = Bi * w3.C[0, 0]
    M[:4, 8 + 4:8 + 6] = Bi
    return M


def robot_arm_genplant(lo, hi, params: dict | None = None) -> LfrPlant:
    """Affine LPV generalized plant over the scheduling box ``[lo, hi]``."""
    nominal = robot_arm_genplant_nominal(params)
    terms = [(f"p{i + 1}", lo[i], hi[i], _arm_term(i, params)) for i in range(10)]
    return affine_lfr(nominal, terms, "lpv")


def smooth_step(t, t0, t1):
    s = np.clip((np.asarray(t, float) - t0) / (t1 - t0), 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def arm_reference(name: str = "ref1"):
    """Named joint-angle references ``r(t)`` with ``r(0) = r'(0) = 0``.

    Returns ``(r, rdot)`` callables.  ``ref1`` is the training trajectory
    used to size the scheduling box; ``ref2`` and ``ref3`` are larger and
    faster and leave it.
    """
    amp = {"ref1": (0.5, -0.4, 0.4, 0.25), "ref2": (0.9, -0.7, 0.6, 0.45),
           "ref3": (1.2, 1.0, 0.8, 0.6)}
    if name not in amp:
        raise KeyError(f"unknown reference {name!r}")
    A1, A2, w1, w2 = amp[name]

    def r(t):
        return np.array([A1 * np.sin(w1 * t) ** 2, A2 * np.sin(w2 * t) ** 2])

    def rdot(t):
        return np.array([A1 * w1 * np.sin(2 * w1 * t), A2 * w2 * np.sin(2 * w2 * t)])

    return r, rdot


def disk_reference(name: str = "steps"):
    """Disk angle reference: smooth steps between plateaus (radians)."""
    if name != "steps":
        raise KeyError(f"unknown reference {name!r}")

    def r(t):
        return np.array([0.5 * smooth_step(t, 1.0, 2.0) - 0.8 * smooth_step(t, 6.0, 7.0)
                         + 0.3 * smooth_step(t, 11.0, 12.0)])

    return r


def scheduling_box(eta, trajectory, pad: float = 1e-3):
    """Component-wise range of ``eta`` along a sampled state trajectory.

    Every range is widened by ``pad`` times ``max(1, |midpoint|)`` so that
    values between samples, and constant components, stay inside the box.
    """
    P = np.array([eta(x) for x in trajectory])
    lo, hi = P.min(axis=0), P.max(axis=0)
    margin = 0.5 * pad * np.maximum(1.0, np.abs(0.5 * (lo + hi)))
    return lo - margin, hi + margin


def arm_reference_box(name: str = "ref1", t_end: float = 20.0, samples: int = 2001, params=None):
    """Scheduling box visited when the arm follows reference ``name`` exactly."""
    r, rdot = arm_reference(name)
    ts = np.linspace(0.0, t_end, samples)
    traj = [np.concatenate([r(t), rdot(t)]) for t in ts]
    return scheduling_box(lambda x: arm_scheduling(x, params), traj)
