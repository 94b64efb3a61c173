"""Continuous-time LTI state-space algebra.

Models carry named, contiguous input/output channel groups so that
interconnections (uncertainty loops, controller loops, performance
channels) can be addressed by name instead of by index arithmetic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .errors import (
    InfiniteNormError,
    NumericalError,
    ResonanceError,
    ShapeError,
    StabilityError,
    WellPosednessError,
)

RCOND_MIN = 1e-12
GroupSpec = Union[str, Sequence[str]]


def _as_matrix(x, rows=None, cols=None) -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.size == 0:
        a = a.reshape(rows if rows is not None else 0, cols if cols is not None else 0)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def _default_groups(groups, width, name):
    if groups is None:
        return {name: (0, width)}
    return {str(k): (int(v[0]), int(v[1])) for k, v in groups.items()}


def _check_groups(groups: Mapping[str, tuple], width: int, side: str):
    covered = np.zeros(width, dtype=int)
    for name, (start, length) in groups.items():
        if start < 0 or length < 0 or start + length > width:
            raise ShapeError(f"{side} group {name!r}={start, length} exceeds width {width}")
        covered[start:start + length] += 1
    if np.any(covered != 1):
        raise ShapeError(f"{side} groups must partition the {width} channels exactly once")


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Real state-space realization ``(A, B, C, D)`` with channel groups.

    ``input_groups`` and ``output_groups`` map a name to ``(start, length)``;
    the groups of each side must partition the channels.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_groups: dict = field(default=None)
    output_groups: dict = field(default=None)

    def __post_init__(self):
        D = _as_matrix(self.D)
        ny, nu = D.shape
        A = _as_matrix(self.A)
        n = A.shape[0]
        B = _as_matrix(self.B, n, nu)
        C = _as_matrix(self.C, ny, n)
        if A.shape != (n, n):
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape != (n, nu):
            raise ShapeError(f"B has shape {B.shape}, expected {(n, nu)}")
        if C.shape != (ny, n):
            raise ShapeError(f"C has shape {C.shape}, expected {(ny, n)}")
        for name, m in zip("ABCD", (A, B, C, D)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
            m.setflags(write=False)
        ig = _default_groups(self.input_groups, nu, "in")
        og = _default_groups(self.output_groups, ny, "out")
        _check_groups(ig, nu, "input")
        _check_groups(og, ny, "output")
        for name, value in (("A", A), ("B", B), ("C", C), ("D", D),
                            ("input_groups", ig), ("output_groups", og)):
            object.__setattr__(self, name, value)

    # -- shape helpers -----------------------------------------------------
    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    @classmethod
    def gain(cls, D, input_groups=None, output_groups=None) -> "StateSpaceModel":
        D = _as_matrix(D)
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                   np.zeros((D.shape[0], 0)), D, input_groups, output_groups)

    def input_index(self, groups: GroupSpec) -> np.ndarray:
        return _group_index(self.input_groups, groups, "input")

    def output_index(self, groups: GroupSpec) -> np.ndarray:
        return _group_index(self.output_groups, groups, "output")

    def select(self, inputs: GroupSpec | None = None,
               outputs: GroupSpec | None = None) -> "StateSpaceModel":
        """Restrict to the given input/output groups (order as listed)."""
        in_names = _names(self.input_groups, inputs)
        out_names = _names(self.output_groups, outputs)
        iu = self.input_index(in_names)
        iy = self.output_index(out_names)
        return StateSpaceModel(
            self.A, self.B[:, iu], self.C[iy, :], self.D[np.ix_(iy, iu)],
            _packed(self.input_groups, in_names), _packed(self.output_groups, out_names),
        )

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "shape": [self.n_states, self.n_inputs, self.n_outputs],
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "input_groups": {k: [s, n] for k, (s, n) in self.input_groups.items()},
            "output_groups": {k: [s, n] for k, (s, n) in self.output_groups.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StateSpaceModel":
        if "shape" in d:
            n, nu, ny = d["shape"]
        else:
            D = np.asarray(d["D"], dtype=float)
            ny, nu = D.shape if D.ndim == 2 else (1, 1)
            n = len(d["A"])
        return cls(
            np.array(d["A"], dtype=float).reshape(n, n),
            np.array(d["B"], dtype=float).reshape(n, nu),
            np.array(d["C"], dtype=float).reshape(ny, n),
            np.array(d["D"], dtype=float).reshape(ny, nu),
            d.get("input_groups"),
            d.get("output_groups"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "StateSpaceModel":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return (f"StateSpaceModel(n_states={self.n_states}, inputs={dict(self.input_groups)}, "
                f"outputs={dict(self.output_groups)})")


def _names(groups: Mapping, spec: GroupSpec | None) -> list:
    if spec is None:
        return list(groups)
    if isinstance(spec, str):
        return [spec]
    return list(spec)


def _group_index(groups: Mapping, spec: GroupSpec, side: str) -> np.ndarray:
    idx = []
    for name in _names(groups, spec):
        if name not in groups:
            raise ShapeError(f"no {side} group named {name!r}; have {list(groups)}")
        start, length = groups[name]
        idx.extend(range(start, start + length))
    return np.array(idx, dtype=int)


def _packed(groups: Mapping, names: Iterable[str]) -> dict:
    out, pos = {}, 0
    for name in names:
        length = groups[name][1]
        out[name] = (pos, length)
        pos += length
    return out


# -- analysis ---------------------------------------------------------------

def eval_freq(sys: StateSpaceModel, omega: float) -> np.ndarray:
    """Frequency response ``D + C (i omega I - A)^-1 B``."""
    if not np.isfinite(omega) or omega < 0:
        raise ValueError(f"omega must be finite and >= 0, got {omega}")
    n = sys.n_states
    if n == 0:
        return sys.D.astype(complex)
    M = 1j * omega * np.eye(n) - sys.A
    rcond = 1.0 / np.linalg.cond(M)
    if not rcond >= RCOND_MIN:
        raise ResonanceError(omega, rcond)
    return sys.D + sys.C @ np.linalg.solve(M, sys.B)


def _sigma_max_many(A, B, C, D, omegas) -> np.ndarray:
    w = np.asarray(omegas, dtype=float).reshape(-1)
    n = A.shape[0]
    M = 1j * w[:, None, None] * np.eye(n) - A
    G = D + C @ np.linalg.solve(M, np.broadcast_to(B, (w.size,) + B.shape))
    return np.linalg.svd(G, compute_uv=False)[:, 0]


def spectral_abscissa(A) -> float:
    """Largest real part of the eigenvalues of ``A`` (``-inf`` when empty)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return -np.inf
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(ev.real))


def lyapunov_solve(A, Q) -> np.ndarray:
    """Solve ``A^T X + X A + Q = 0`` for stable ``A``."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    if spectral_abscissa(A) >= 0:
        raise StabilityError("Lyapunov solve needs a Hurwitz matrix")
    try:
        X = solve_continuous_lyapunov(A.T, -Q)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Lyapunov solve failed: {exc}") from exc
    X = 0.5 * (X + X.T)
    res = np.linalg.norm(A.T @ X + X @ A + Q)
    bound = 1e-8 * (np.linalg.norm(A) * np.linalg.norm(X) + np.linalg.norm(Q))
    if not res <= max(bound, 1e-300):
        raise NumericalError(f"Lyapunov residual {res:.3g} exceeds {bound:.3g}")
    return X


def _require_stable(sys: StateSpaceModel):
    if sys.n_states and spectral_abscissa(sys.A) >= 0:
        raise StabilityError("system is not Hurwitz stable; norm is unbounded")


def controllability_gramian(sys: StateSpaceModel) -> np.ndarray:
    return lyapunov_solve(sys.A.T, sys.B @ sys.B.T)


def h2_norm(sys: StateSpaceModel) -> float:
    _require_stable(sys)
    if np.any(sys.D != 0):
        raise InfiniteNormError("H2 norm is infinite for D != 0")
    if sys.n_states == 0:
        return 0.0
    Wc = controllability_gramian(sys)
    return float(np.sqrt(max(np.trace(sys.C @ Wc @ sys.C.T), 0.0)))


def gen_h2_norm(sys: StateSpaceModel) -> float:
    """Generalized H2 (L2 -> L-infinity) gain: sqrt of lambda_max(C Wc C^T)."""
    _require_stable(sys)
    if np.any(sys.D != 0):
        raise InfiniteNormError("generalized H2 norm is infinite for D != 0")
    if sys.n_states == 0 or sys.n_outputs == 0:
        return 0.0
    Wc = controllability_gramian(sys)
    P = sys.C @ Wc @ sys.C.T
    return float(np.sqrt(max(np.linalg.eigvalsh(0.5 * (P + P.T))[-1], 0.0)))


def _hamiltonian(A, B, C, D, gamma):
    m, p = B.shape[1], C.shape[0]
    R = D.T @ D - gamma ** 2 * np.eye(m)
    S = D @ D.T - gamma ** 2 * np.eye(p)
    Rinv = np.linalg.inv(R)
    Sinv = np.linalg.inv(S)
    Ah = A - B @ Rinv @ D.T @ C
    return np.block([
        [Ah, -gamma * B @ Rinv @ B.T],
        [gamma * C.T @ Sinv @ C, -Ah.T],
    ])


def _imag_axis_freqs(A, B, C, D, gamma):
    H = _hamiltonian(A, B, C, D, gamma)
    ev = np.linalg.eigvals(H)
    tol = 1e-8 * max(np.linalg.norm(H, 1), 1.0)
    on_axis = ev[np.abs(ev.real) <= tol]
    return np.sort(np.abs(on_axis.imag))


LIFT_STEPS = 12


def _gramian_upper_bound(A, B, C, D, sd, lo):
    """``sigma_max(D) + 2 sqrt(n tr(Wc) tr(Wo))``, doubled until no crossing remains."""
    Wc = lyapunov_solve(A.T, B @ B.T)
    Wo = lyapunov_solve(A, C.T @ C)
    n = A.shape[0]
    hi = sd + 2.0 * np.sqrt(n * max(np.trace(Wc), 0.0) * max(np.trace(Wo), 0.0))
    hi = max(hi, lo)
    for _ in range(64):
        if not _imag_axis_freqs(A, B, C, D, hi).size:
            break
        hi *= 2.0
    return hi


def _confirm_crossing(A, B, C, D, w, gamma):
    """Largest singular value found around the crossing frequencies ``w``."""
    mids = 0.5 * (w[:-1] + w[1:]) if w.size > 1 else w
    probe = np.concatenate([mids, w])
    best = float(_sigma_max_many(A, B, C, D, probe).max())
    if best > gamma:
        return best
    edges = np.concatenate([[0.0], w, [2.0 * w[-1] + 1.0]])
    dense = np.concatenate([np.linspace(a, b, 9)[1:-1] for a, b in zip(edges[:-1], edges[1:])])
    return max(best, float(_sigma_max_many(A, B, C, D, dense).max()))


def hinf_norm(sys: StateSpaceModel, rel_tol: float = 1e-6, max_iter: int = 200) -> float:
    """H-infinity norm by Hamiltonian bisection.

    The lower end of the bracket starts at ``sigma_max(D)`` (raised by a few
    probe frequencies).  Each trial level ``gamma`` is tested for
    imaginary-axis eigenvalues of the Hamiltonian; when some exist, ``lo`` is
    lifted to the largest singular value found at the midpoints of the
    crossing frequencies, which usually converges in a handful of steps.
    Crossings that no nearby frequency confirms are rounding artefacts and
    make ``gamma`` an upper bound.  If lifting has not converged after
    ``LIFT_STEPS`` trials, a Gramian upper bound closes the bracket and plain
    bisection finishes the job.
    """
    _require_stable(sys)
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    sd = float(np.linalg.norm(D, 2)) if D.size else 0.0
    n = A.shape[0]
    if n == 0 or B.size == 0 or C.size == 0:
        return sd

    ev = np.linalg.eigvals(A)
    probes = np.unique(np.concatenate([[0.0], np.abs(ev), np.abs(ev.imag)]))
    lo = max(sd, float(_sigma_max_many(A, B, C, D, probes).max()))
    lo = max(lo, sd * (1.0 + 10 * np.finfo(float).eps), np.finfo(float).tiny)
    # the Gramian bracket is only built when lifting stalls
    hi = np.inf
    for it in range(max_iter):
        if it == LIFT_STEPS and not np.isfinite(hi):
            hi = _gramian_upper_bound(A, B, C, D, sd, lo)
        if hi <= lo * (1.0 + rel_tol):
            break
        gamma = min(0.5 * (lo + hi), lo * (1.0 + rel_tol))
        w = _imag_axis_freqs(A, B, C, D, gamma)
        if w.size == 0:
            hi = gamma
            continue
        lifted = _confirm_crossing(A, B, C, D, w, gamma)
        if lifted > gamma:
            lo = max(lo, lifted)
        else:
            # no frequency near the crossings exceeds gamma: the eigenvalues
            # were within rounding of the axis, so gamma bounds the peak
            hi = gamma
    else:
        raise NumericalError("H-infinity bisection did not converge")
    return float(0.5 * (lo + hi))


# -- interconnection ----------------------------------------------------------

def _as_block(x) -> StateSpaceModel:
    if isinstance(x, StateSpaceModel):
        return x
    return StateSpaceModel.gain(_as_matrix(x))


def _has_loop(sys, channels) -> bool:
    return (isinstance(sys, StateSpaceModel)
            and channels[0] in sys.input_groups and channels[1] in sys.output_groups)


def redheffer_star(upper, lower, channels: tuple = ("delta", "delta")) -> StateSpaceModel:
    """Close a feedback loop between a grouped plant and a block.

    ``channels = (input_group, output_group)`` names the loop channels of the
    plant.  If ``lower`` owns those groups the result is the upper LFT
    ``upper * lower`` (e.g. a static uncertainty matrix absorbed into ``G``);
    otherwise ``upper`` is the plant and the result is the lower LFT
    (e.g. a controller ``K`` closing ``P`` over ``("u", "y")``).  The block
    reads the plant's loop output and drives its loop input.  States of the
    block are appended after the plant states.
    """
    if _has_loop(lower, channels):
        plant, block = lower, _as_block(upper)
    elif _has_loop(upper, channels):
        plant, block = upper, _as_block(lower)
    else:
        raise ShapeError(f"neither operand has loop channels {channels}")
    return _close_loop(plant, block, channels[0], channels[1])


def _close_loop(plant: StateSpaceModel, block: StateSpaceModel,
                in_group: str, out_group: str) -> StateSpaceModel:
    iu = plant.input_index(in_group)
    iy = plant.output_index(out_group)
    ext_in = [g for g in plant.input_groups if g != in_group]
    ext_out = [g for g in plant.output_groups if g != out_group]
    iw = plant.input_index(ext_in)
    iz = plant.output_index(ext_out)
    nu, ny = iu.size, iy.size
    if block.D.shape != (nu, ny):
        raise ShapeError(f"block maps {block.n_inputs}->{block.n_outputs} channels, "
                         f"loop needs {ny}->{nu}")

    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    B1, B2 = B[:, iw], B[:, iu]
    C1, C2 = C[iz, :], C[iy, :]
    D11, D12 = D[np.ix_(iz, iw)], D[np.ix_(iz, iu)]
    D21, D22 = D[np.ix_(iy, iw)], D[np.ix_(iy, iu)]
    Ak, Bk, Ck, Dk = block.A, block.B, block.C, block.D
    n, nk = A.shape[0], Ak.shape[0]

    loop = np.block([[np.eye(ny), -D22], [-Dk, np.eye(nu)]])
    if loop.size:
        rcond = 1.0 / np.linalg.cond(loop)
        if not rcond >= RCOND_MIN:
            raise WellPosednessError(f"interconnection is ill-posed (rcond={rcond:.3g})")
        Linv = np.linalg.inv(loop)
    else:
        Linv = loop
    Gx = np.block([[C2, np.zeros((ny, nk))], [np.zeros((nu, n)), Ck]])
    Gw = np.vstack([D21, np.zeros((nu, iw.size))])
    yu_x = Linv @ Gx
    yu_w = Linv @ Gw
    y_x, u_x = yu_x[:ny], yu_x[ny:]
    y_w, u_w = yu_w[:ny], yu_w[ny:]

    Acl = np.block([[A, np.zeros((n, nk))], [np.zeros((nk, n)), Ak]])
    Acl = Acl + np.vstack([B2 @ u_x, Bk @ y_x])
    Bcl = np.vstack([B1 + B2 @ u_w, Bk @ y_w])
    Ccl = np.hstack([C1, np.zeros((iz.size, nk))]) + D12 @ u_x
    Dcl = D11 + D12 @ u_w
    return StateSpaceModel(Acl, Bcl, Ccl, Dcl,
                           _packed(plant.input_groups, ext_in),
                           _packed(plant.output_groups, ext_out))


def append(*systems: StateSpaceModel) -> StateSpaceModel:
    """Block-diagonal stacking; group names must not collide."""
    from scipy.linalg import block_diag

    ig, og, pi, po = {}, {}, 0, 0
    for s in systems:
        for k, (st, ln) in s.input_groups.items():
            if k in ig:
                raise ShapeError(f"duplicate input group {k!r}")
            ig[k] = (pi + st, ln)
        for k, (st, ln) in s.output_groups.items():
            if k in og:
                raise ShapeError(f"duplicate output group {k!r}")
            og[k] = (po + st, ln)
        pi += s.n_inputs
        po += s.n_outputs
    n = sum(s.n_states for s in systems)
    A = block_diag(*[s.A for s in systems]) if n else np.zeros((0, 0))
    B = np.zeros((n, pi))
    C = np.zeros((po, n))
    D = np.zeros((po, pi))
    r = ci = co = 0
    for s in systems:
        B[r:r + s.n_states, ci:ci + s.n_inputs] = s.B
        C[co:co + s.n_outputs, r:r + s.n_states] = s.C
        D[co:co + s.n_outputs, ci:ci + s.n_inputs] = s.D
        r += s.n_states
        ci += s.n_inputs
        co += s.n_outputs
    return StateSpaceModel(A, B, C, D, ig, og)
