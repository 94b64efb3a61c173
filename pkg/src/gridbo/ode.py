"""Adaptive Dormand-Prince 5(4) integrator that reports divergence as data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

DIVERGENCE_NORM = 1e8


@dataclass
class OdeResult:
    t: np.ndarray
    x: np.ndarray
    steps: int
    rejected: int
    diverged: bool
    message: str = ""


def rk45(f, x0, t_span, rel_tol=1e-6, abs_tol=1e-9, max_step=np.inf, t_eval=None,
         first_step=None, max_steps=10_000_000) -> OdeResult:
    """Integrate ``x' = f(t, x)`` over ``t_span``.

    Steps are accepted when the scaled RMS of the embedded error estimate is
    at most one.  When ``t_eval`` is given, steps are clipped to land on its
    points and only those samples are recorded, which also keeps steps from
    straddling discontinuities of piecewise-constant inputs.  A state norm above
    ``1e8``, a non-finite derivative or a step below machine resolution ends
    the run with ``diverged=True`` and the trajectory truncated.
    """
    if not (rel_tol > 0 and abs_tol > 0):
        raise ValueError("tolerances must be positive")
    t0, t1 = map(float, t_span)
    x = np.array(x0, dtype=float).reshape(-1)
    grid = None if t_eval is None else np.asarray(t_eval, float)
    ts, xs = [t0], [x.copy()]
    gi = 1 if grid is not None and grid.size and np.isclose(grid[0], t0) else 0
    if grid is not None:
        ts, xs = ([t0], [x.copy()]) if gi == 1 else ([], [])

    t = t0
    k1 = np.asarray(f(t, x), float)
    h = first_step or _initial_step(f, t, x, k1, rel_tol, abs_tol, t1 - t0)
    h = min(h, max_step, t1 - t0) if t1 > t0 else 0.0
    steps = rejected = 0
    diverged, message = False, ""
    while t < t1 and steps < max_steps:
        if not np.all(np.isfinite(k1)):
            diverged, message = True, "non-finite derivative"
            break
        target = t1 if grid is None or gi >= grid.size else grid[gi]
        h = min(h, max_step, target - t)
        if h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            if target - t <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
                t = target
                if grid is not None and gi < grid.size:
                    ts.append(t); xs.append(x.copy()); gi += 1
                continue
            diverged, message = True, f"step size underflow at t={t:.6g}"
            break
        K = [k1]
        for i in range(1, 7):
            xi = x + h * sum(a * k for a, k in zip(_A[i], K))
            K.append(np.asarray(f(t + _C[i] * h, xi), float))
        x_new = x + h * sum(b * k for b, k in zip(_B5, K) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_E, K) if e != 0.0)
        scale = abs_tol + rel_tol * np.maximum(np.abs(x), np.abs(x_new))
        en = float(np.sqrt(np.mean((err / scale) ** 2))) if x.size else 0.0
        if not np.isfinite(en):
            en = np.inf
        if en <= 1.0:
            t = t + h
            x = x_new
            k1 = K[6]
            steps += 1
            if grid is None:
                ts.append(t); xs.append(x.copy())
            elif gi < grid.size and t >= grid[gi] - 1e-12 * max(1.0, abs(t)):
                t = grid[gi]
                ts.append(t); xs.append(x.copy()); gi += 1
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
                diverged, message = True, f"state norm exceeded {DIVERGENCE_NORM:g} at t={t:.6g}"
                break
            fac = 0.9 * en ** -0.2 if en > 0 else 5.0
            h *= min(5.0, max(0.2, fac))
        else:
            rejected += 1
            h *= max(0.1, 0.9 * en ** -0.2) if np.isfinite(en) else 0.1
    return OdeResult(np.array(ts), np.array(xs).reshape(len(ts), x.size), steps, rejected,
                     diverged, message)


def _initial_step(f, t, x, k1, rtol, atol, span):
    scale = atol + rtol * np.abs(x)
    d0 = np.sqrt(np.mean((x / scale) ** 2)) if x.size else 0.0
    d1 = np.sqrt(np.mean((k1 / scale) ** 2)) if x.size else 0.0
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, abs(span)) if span else h0
    k2 = np.asarray(f(t + h0, x + h0 * k1), float)
    d2 = np.sqrt(np.mean(((k2 - k1) / scale) ** 2)) / h0 if x.size else 0.0
    if not np.isfinite(d2):
        return h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    return max(min(100 * h0, h1), 1e-12)
