"""Fixed-structure multi-model controller tuning.

The tuner is derivative-free: a stabilization phase drives the largest
closed-loop spectral abscissa over all local models below ``-margin``, then
a performance phase minimizes the aggregated cost with an infinite barrier on
instability.  Both phases use Nelder-Mead simplex search from several seeded
random starts.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .costs import CostSpec, aggregate as _aggregate, closed_loop_cost
from .errors import NumericalError, ShapeError, SynthesisError, WellPosednessError
from .lti import StateSpaceModel, redheffer_star, spectral_abscissa

log = logging.getLogger(__name__)

LOOP = ("u", "y")


@dataclass(frozen=True)
class ControllerStructure:
    n_xk: int
    n_u: int
    n_y: int
    fixed_zero_D: bool = False

    def __post_init__(self):
        if min(self.n_xk, self.n_u, self.n_y) < 0:
            raise ShapeError("controller dimensions must be nonnegative")

    @property
    def n_params(self) -> int:
        n, nu, ny = self.n_xk, self.n_u, self.n_y
        return n * n + n * ny + nu * n + (0 if self.fixed_zero_D else nu * ny)

    def to_dict(self) -> dict:
        return {"n_xk": self.n_xk, "n_u": self.n_u, "n_y": self.n_y,
                "fixed_zero_D": self.fixed_zero_D}


@dataclass(frozen=True, eq=False)
class ControllerParam:
    """Controller ``(A_k, B_k, C_k, D_k)`` stored as one flat vector.

    Layout: ``A_k``, ``B_k``, ``C_k`` and (unless fixed to zero) ``D_k``,
    each row-major.  ``extrapolated`` is set by interpolated fields queried
    outside their domain.
    """

    structure: ControllerStructure
    vector: np.ndarray
    extrapolated: bool = False

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).reshape(-1).copy()
        if v.size != self.structure.n_params:
            raise ShapeError(f"expected {self.structure.n_params} parameters, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("controller parameters must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @classmethod
    def zeros(cls, structure: ControllerStructure) -> "ControllerParam":
        return cls(structure, np.zeros(structure.n_params))

    @classmethod
    def from_matrices(cls, structure, Ak, Bk, Ck, Dk=None, extrapolated=False) -> "ControllerParam":
        parts = [np.asarray(Ak, float).reshape(structure.n_xk, structure.n_xk),
                 np.asarray(Bk, float).reshape(structure.n_xk, structure.n_y),
                 np.asarray(Ck, float).reshape(structure.n_u, structure.n_xk)]
        if not structure.fixed_zero_D:
            parts.append(np.zeros((structure.n_u, structure.n_y)) if Dk is None
                         else np.asarray(Dk, float).reshape(structure.n_u, structure.n_y))
        return cls(structure, np.concatenate([p.ravel() for p in parts]), extrapolated)

    def unpack(self):
        s = self.structure
        n, nu, ny = s.n_xk, s.n_u, s.n_y
        v = self.vector
        i = 0
        Ak = v[i:i + n * n].reshape(n, n); i += n * n
        Bk = v[i:i + n * ny].reshape(n, ny); i += n * ny
        Ck = v[i:i + nu * n].reshape(nu, n); i += nu * n
        Dk = np.zeros((nu, ny)) if s.fixed_zero_D else v[i:i + nu * ny].reshape(nu, ny)
        return Ak, Bk, Ck, Dk

    def matrix(self) -> np.ndarray:
        """``[[A_k, B_k], [C_k, D_k]]``."""
        Ak, Bk, Ck, Dk = self.unpack()
        return np.block([[Ak, Bk], [Ck, Dk]])

    @classmethod
    def from_matrix(cls, structure, M, extrapolated=False) -> "ControllerParam":
        n = structure.n_xk
        M = np.asarray(M, float)
        return cls.from_matrices(structure, M[:n, :n], M[:n, n:], M[n:, :n], M[n:, n:], extrapolated)

    def as_system(self) -> StateSpaceModel:
        Ak, Bk, Ck, Dk = self.unpack()
        return StateSpaceModel(Ak, Bk, Ck, Dk, {"y": (0, self.structure.n_y)},
                               {"u": (0, self.structure.n_u)})

    def at(self, point=None) -> "ControllerParam":
        return self

    def to_dict(self) -> dict:
        Ak, Bk, Ck, Dk = self.unpack()
        return {"structure": self.structure.to_dict(), "A_k": Ak.tolist(), "B_k": Bk.tolist(),
                "C_k": Ck.tolist(), "D_k": Dk.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerParam":
        s = ControllerStructure(**d["structure"])
        return cls.from_matrices(s, d["A_k"], d["B_k"], d["C_k"], d["D_k"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def close_loop(local: StateSpaceModel, k: ControllerParam, channels=LOOP) -> StateSpaceModel:
    """Lower LFT of a local model with the controller over ``channels``."""
    ku = local.input_groups.get(channels[0], (0, -1))[1]
    ky = local.output_groups.get(channels[1], (0, -1))[1]
    if (ku, ky) != (k.structure.n_u, k.structure.n_y):
        raise ShapeError(f"controller is {k.structure.n_y}->{k.structure.n_u}, plant loop is {ky}->{ku}")
    return redheffer_star(local, k.as_system(), channels)


class LoopForm:
    """Partition of a local model around its ``(u, y)`` loop, for fast closure.

    Closing the loop through the generic star product re-validates block
    matrices on every call; the tuner closes thousands of loops per run, so
    the partition is computed once per local model here.
    """

    def __init__(self, local: StateSpaceModel, channels=LOOP):
        self.local = local
        ui = local.input_index(channels[0])
        yi = local.output_index(channels[1])
        wi = np.setdiff1d(np.arange(local.n_inputs), ui)
        zi = np.setdiff1d(np.arange(local.n_outputs), yi)
        A, B, C, D = local.A, local.B, local.C, local.D
        self.A, self.B1, self.B2 = A, B[:, wi], B[:, ui]
        self.C1, self.C2 = C[zi], C[yi]
        self.D11, self.D12 = D[np.ix_(zi, wi)], D[np.ix_(zi, ui)]
        self.D21, self.D22 = D[np.ix_(yi, wi)], D[np.ix_(yi, ui)]
        self.in_groups = _repack(local.input_groups, wi)
        self.out_groups = _repack(local.output_groups, zi)
        self.n_u, self.n_y = ui.size, yi.size

    def matrices(self, k: ControllerParam, state_only=False):
        if (self.n_u, self.n_y) != (k.structure.n_u, k.structure.n_y):
            raise ShapeError(f"controller is {k.structure.n_y}->{k.structure.n_u}, "
                             f"plant loop is {self.n_y}->{self.n_u}")
        Ak, Bk, Ck, Dk = k.unpack()
        if np.any(Dk) and np.any(self.D22):
            F = np.eye(self.n_y) - self.D22 @ Dk
            if 1.0 / np.linalg.cond(F, 1) < 1e-12:
                raise WellPosednessError("feedback loop is not well posed")
            S = np.linalg.inv(F)
        else:
            S = np.eye(self.n_y)
        SC2, SD22Ck = S @ self.C2, S @ self.D22 @ Ck
        Ux, Uk = Dk @ SC2, Ck + Dk @ SD22Ck          # u = Ux x + Uk xk (+ Uw w)
        n = self.A.shape[0]
        Acl = np.empty((n + Ak.shape[0],) * 2)
        Acl[:n, :n] = self.A + self.B2 @ Ux
        Acl[:n, n:] = self.B2 @ Uk
        Acl[n:, :n] = Bk @ SC2
        Acl[n:, n:] = Ak + Bk @ SD22Ck
        if state_only:
            return Acl
        SD21 = S @ self.D21
        Uw = Dk @ SD21
        Bcl = np.vstack([self.B1 + self.B2 @ Uw, Bk @ SD21])
        Ccl = np.hstack([self.C1 + self.D12 @ Ux, self.D12 @ Uk])
        Dcl = self.D11 + self.D12 @ Uw
        return Acl, Bcl, Ccl, Dcl

    def close(self, k: ControllerParam) -> StateSpaceModel:
        return StateSpaceModel(*self.matrices(k), self.in_groups, self.out_groups)


def _repack(groups, keep):
    pos = {int(c): i for i, c in enumerate(keep)}
    out = {}
    for name, (s, n) in groups.items():
        idx = [pos[c] for c in range(s, s + n) if c in pos]
        if idx:
            out[name] = (idx[0], len(idx))
    return out


def _forms(locals_, channels):
    return [l if isinstance(l, LoopForm) else LoopForm(l, channels) for l in locals_]


def multimodel_cost(k: ControllerParam, locals_: Sequence[StateSpaceModel], cost: CostSpec,
                    aggregate: str = "max", channels=LOOP) -> float:
    """Aggregate (max or sum) of the closed-loop cost over all local models."""
    if not len(locals_):
        raise ValueError("need at least one local model")
    values = []
    for form in _forms(locals_, channels):
        try:
            Acl = form.matrices(k, state_only=True)
        except NumericalError:
            return np.inf
        if spectral_abscissa(Acl) >= 0:
            return np.inf
        v = closed_loop_cost(form.close(k), cost)
        if not np.isfinite(v):
            return np.inf
        values.append(v)
    return _aggregate(values, aggregate)


def max_abscissa(k: ControllerParam, locals_, channels=LOOP) -> float:
    """Largest closed-loop spectral abscissa over the local models."""
    worst = -np.inf
    for form in _forms(locals_, channels):
        try:
            Acl = form.matrices(k, state_only=True)
        except NumericalError:
            return np.inf
        worst = max(worst, spectral_abscissa(Acl))
    return worst


@dataclass
class SynthesisOptions:
    restarts: int = 10
    budget: int = 500
    polish_budget: int = 3000
    seed: int = 0
    margin: float = 1e-3
    aggregate: str = "max"
    stability_only: bool = False
    init_scale: float | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "SynthesisOptions":
        return cls(**(d or {}))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class _Feasible(Exception):
    pass


class _Counter:
    def __init__(self, fn, budget):
        self.fn = fn
        self.left = budget

    def __call__(self, x):
        self.left -= 1
        return self.fn(x)


def _simplex(x0, scale):
    n = x0.size
    step = np.maximum(0.1 * np.abs(x0), 0.05 * scale)
    return np.vstack([x0, x0 + np.diag(step)]) if n else x0[None, :]


def _default_scale(locals_) -> float:
    vals = [np.linalg.norm(l.A) / max(l.A.shape[0], 1) for l in locals_]
    return max(0.1 * float(np.mean(vals)), 1e-3)


def _nelder_mead(f, x0, scale, maxfev):
    if maxfev <= 0 or x0.size == 0:
        return x0, f(x0)
    res = minimize(f, x0, method="Nelder-Mead",
                   options={"initial_simplex": _simplex(x0, scale), "maxfev": int(maxfev),
                            "xatol": 1e-7, "fatol": 1e-9, "adaptive": x0.size > 6})
    return res.x, res.fun


def _stabilize(x0, structure, forms, opts, scale, budget):
    """Minimize the worst spectral abscissa until it is below ``-margin``."""
    best = {"x": x0.copy(), "a": np.inf}

    def f(x):
        a = max_abscissa(ControllerParam(structure, x), forms)
        if a < best["a"]:
            best["x"], best["a"] = x.copy(), a
        if a < -opts.margin:
            raise _Feasible
        return a if np.isfinite(a) else 1e12

    x = x0.copy()
    counter = _Counter(f, budget)
    try:
        while counter.left > 0:
            x, _ = _nelder_mead(counter, best["x"], scale, counter.left)
    except _Feasible:
        pass
    return best["x"], best["a"], budget - max(counter.left, 0)


def _descend(f, x, fx, scale, budget):
    """Repeated simplex descent from ``x`` until it stops improving."""
    counter = _Counter(f, budget)
    while counter.left > 0:
        x_new, f_new = _nelder_mead(counter, x, scale, counter.left)
        improved = f_new < fx - 1e-9 * abs(fx)
        if f_new <= fx:
            x, fx = x_new, f_new
        if not improved:
            break
    return x, fx


def synthesize(locals_: Sequence[StateSpaceModel], structure: ControllerStructure, cost: CostSpec,
               opts: SynthesisOptions | None = None, warm_start: ControllerParam | None = None,
               channels=LOOP) -> ControllerParam:
    """Tune ``structure`` to minimize the aggregated cost over ``locals_``.

    Every restart first stabilizes all local models, then descends on the
    cost with ``opts.budget`` evaluations.  The best restart is polished
    with another ``opts.polish_budget`` evaluations.  Restart 0 starts from
    ``warm_start`` when given, so the result never costs more than the warm
    start.  Raises :class:`SynthesisError` when no restart stabilizes every
    local model.
    """
    opts = opts or SynthesisOptions()
    if not len(locals_):
        raise ValueError("need at least one local model")
    if opts.budget < 1:
        raise ValueError("budget must be >= 1")
    forms = _forms(locals_, channels)
    scale = opts.init_scale or _default_scale(forms)
    rng = np.random.default_rng(opts.seed)
    n_par = structure.n_params

    def perf(x):
        return multimodel_cost(ControllerParam(structure, x), forms, cost, opts.aggregate)

    results = []
    best_abscissa, best_infeasible = np.inf, None
    for r in range(max(opts.restarts, 1)):
        if r == 0 and warm_start is not None:
            x0 = np.array(warm_start.vector, dtype=float)
        else:
            x0 = rng.normal(0.0, scale, size=n_par)
        x, a, used = _stabilize(x0, structure, forms, opts, scale, opts.budget)
        if not a < 0:
            if a < best_abscissa:
                best_abscissa, best_infeasible = a, x
            log.debug("restart %d: no stabilizing point (abscissa %.3g)", r, a)
            continue
        fx = perf(x)
        if not opts.stability_only:
            x, fx = _descend(perf, x, fx, scale, opts.budget - used)
        if np.isfinite(fx):
            results.append((fx, r, x))
            log.debug("restart %d: cost %.6g", r, fx)

    if not results:
        raise SynthesisError(
            f"no stabilizing controller found; best worst-case abscissa {best_abscissa:.4g}",
            best_abscissa,
            None if best_infeasible is None else ControllerParam(structure, best_infeasible),
        )
    fx, r, x = min(results, key=lambda t: (t[0], t[1]))
    if not opts.stability_only and opts.polish_budget > 0:
        x, fx = _descend(perf, x, fx, scale, opts.polish_budget)
    return ControllerParam(structure, x)
