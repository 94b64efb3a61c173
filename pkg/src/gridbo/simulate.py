"""Nonlinear closed-loop simulation with a (possibly scheduled) output-feedback controller."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .benchmarks import NonlinearModel
from .errors import ShapeError
from .lti import StateSpaceModel
from .ode import rk45


@dataclass
class SimResult:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    r: np.ndarray
    steps: int
    rejected: int
    diverged: bool
    message: str = ""
    extrapolated: int = 0
    rmse: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.rmse is None:
            self.rmse = rmse(self.y, self.r, self.diverged)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nx, nu, ny = self.x.shape[1], self.u.shape[1], self.y.shape[1]
        w.writerow(["t"] + [f"x{i + 1}" for i in range(nx)] + [f"u{i + 1}" for i in range(nu)]
                   + [f"y{i + 1}" for i in range(ny)] + [f"r{i + 1}" for i in range(ny)])
        for row in np.column_stack([self.t, self.x, self.u, self.y, self.r]):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def rmse(y, r, diverged=False) -> np.ndarray:
    """Per-channel root-mean-square tracking error (``inf`` after divergence)."""
    y = np.atleast_2d(y)
    if diverged or not len(y):
        return np.full(y.shape[1], np.inf)
    return np.sqrt(np.mean((y - r) ** 2, axis=0))


def zoh_noise(psd: float, ts: float, t_end: float, seed, channels: int = 1):
    """Piecewise-constant white noise with variance ``psd / ts`` per hold interval."""
    n = int(np.ceil(t_end / ts)) + 1
    vals = np.random.default_rng(seed).normal(0.0, np.sqrt(psd / ts), size=(n, channels))

    def w(t):
        return vals[min(int(t / ts), n - 1)]

    return w


def _controller_at(controller, p):
    if hasattr(controller, "matrix") and hasattr(controller, "nodes"):
        M = controller.matrix(p)
        n = controller.structure.n_xk
        outside = bool(np.any(p < controller.lo) or np.any(p > controller.hi))
        return M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:], outside
    return (*controller.unpack(), False)


def simulate_closed_loop(model: NonlinearModel, controller, reference, t_span, *,
                         disturbance=None, disturbance_filter: StateSpaceModel | None = None,
                         x0=None, rel_tol=1e-6, abs_tol=1e-8, max_step=np.inf,
                         dt_out: float = 0.01) -> SimResult:
    """Simulate ``model`` under ``u = K(e)``, ``e = r - y``, from rest.

    ``controller`` is a :class:`ControllerParam` or an RBF controller field;
    a field is scheduled with ``model.eta(x)`` at every derivative call.
    ``disturbance(t)`` drives ``disturbance_filter`` (or enters directly),
    and the result is added to the plant input.  Outputs are recorded every
    ``dt_out`` seconds, which also caps steps at disturbance hold edges when
    ``dt_out`` divides the hold time.
    """
    scheduled = hasattr(controller, "nodes")
    structure = controller.structure
    if (structure.n_u, structure.n_y) != (model.n_u, model.n_y):
        raise ShapeError(f"controller is {structure.n_y}->{structure.n_u}, "
                         f"model is {model.n_u} in / {model.n_y} out")
    if scheduled and model.eta is None:
        raise ShapeError("a scheduled controller needs a model with a scheduling map")
    nk = structure.n_xk
    fil = disturbance_filter
    nf = fil.n_states if fil is not None else 0
    nx = model.n_x
    x_init = np.zeros(nx + nk + nf)
    if x0 is not None:
        x_init[:nx] = x0
    counts = {"outside": 0}
    fixed = None if scheduled else controller.unpack()

    def parts(t, z):
        x, xk, xf = z[:nx], z[nx:nx + nk], z[nx + nk:]
        if scheduled:
            Ak, Bk, Ck, Dk, outside = _controller_at(controller, model.eta(x))
            counts["outside"] += outside
        else:
            Ak, Bk, Ck, Dk = fixed
        e = np.asarray(reference(t), float) - model.h(x)
        u = Ck @ xk + Dk @ e
        d = np.zeros(model.n_u)
        dxf = np.zeros(0)
        if disturbance is not None:
            wd = np.atleast_1d(disturbance(t))
            if fil is not None:
                d = fil.C @ xf + fil.D @ wd
                dxf = fil.A @ xf + fil.B @ wd
            else:
                d = wd
        return x, xk, e, u, d, dxf, (Ak, Bk)

    def rhs(t, z):
        x, xk, e, u, d, dxf, (Ak, Bk) = parts(t, z)
        return np.concatenate([model.f(t, x, u + d), Ak @ xk + Bk @ e, dxf])

    t0, t1 = t_span
    grid = np.arange(t0, t1 + 0.5 * dt_out, dt_out)
    out = rk45(rhs, x_init, (t0, t1), rel_tol, abs_tol, max_step, t_eval=grid)
    us, ys, rs = [], [], []
    for t, z in zip(out.t, out.x):
        x, _, _, u, _, _, _ = parts(t, z)
        us.append(u)
        ys.append(model.h(x))
        rs.append(np.asarray(reference(t), float))
    shape = lambda a, m: np.array(a).reshape(len(out.t), m)
    return SimResult(out.t, out.x[:, :nx], shape(us, model.n_u), shape(ys, model.n_y),
                     shape(rs, model.n_y), out.steps, out.rejected, out.diverged, out.message,
                     counts["outside"])
