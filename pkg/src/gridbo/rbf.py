"""Multiquadric RBF interpolation of controller matrices over scheduling points."""
from __future__ import annotations

import json

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import ConditioningError, ShapeError
from .gp import UnitBox
from .synthesis import ControllerParam, ControllerStructure

RCOND_MIN = 1e-12
RESIDUAL_MAX = 1e-8


def rbf_distance(theta, theta_tilde, c: float) -> float:
    """``sqrt(||theta - theta_tilde||^2 + c^2)``."""
    if not c > 0:
        raise ValueError("shape constant c must be positive")
    d = np.asarray(theta, float) - np.asarray(theta_tilde, float)
    return float(np.sqrt(d @ d + c * c))


def _distances(X, Y, c):
    diff = X[:, None, :] - Y[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1) + c * c)


def default_shape(nodes_unit: np.ndarray) -> float:
    """Half the mean nearest-neighbour distance (1.0 for a single node)."""
    if len(nodes_unit) < 2:
        return 1.0
    D = np.sqrt(np.sum((nodes_unit[:, None] - nodes_unit[None]) ** 2, axis=-1))
    np.fill_diagonal(D, np.inf)
    nn = D.min(axis=1)
    c = 0.5 * float(np.mean(nn))
    return c if c > 0 else 1.0


class RbfControllerField:
    """LPV controller ``M(p) = mat(sum_j d(p, theta_j) W_j)``.

    ``M = [[A_k, B_k], [C_k, D_k]]`` is vectorized row-wise.  Nodes and
    queries are mapped onto the unit box ``[lo, hi]`` before distances are
    taken; queries outside the box are allowed and flagged.
    """

    def __init__(self, nodes, W, c, structure: ControllerStructure, lo, hi, rcond=None):
        self.nodes = np.atleast_2d(np.asarray(nodes, float))
        self.W = np.ascontiguousarray(W, dtype=float)  # same layout after a JSON round trip
        self.c = float(c)
        self.structure = structure
        self.box = UnitBox(lo, hi)
        self.rcond = rcond
        n = structure.n_xk
        self._shape = (n + structure.n_u, n + structure.n_y)
        if self.W.shape != (len(self.nodes), self._shape[0] * self._shape[1]):
            raise ShapeError(f"W has shape {self.W.shape}")

    @property
    def lo(self):
        return self.box.lo

    @property
    def hi(self):
        return self.box.hi

    def matrix(self, p) -> np.ndarray:
        u = self.box.to_unit(np.reshape(p, (1, -1)))
        d = _distances(u, self.box.to_unit(self.nodes), self.c)[0]
        return (d @ self.W).reshape(self._shape)

    def at(self, p) -> ControllerParam:
        return query_field(self, p)

    def to_dict(self) -> dict:
        return {"structure": self.structure.to_dict(), "nodes": self.nodes.tolist(),
                "c": self.c, "W": self.W.tolist(), "lo": self.lo.tolist(), "hi": self.hi.tolist(),
                "dims": list(self.W.shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "RbfControllerField":
        return cls(d["nodes"], np.array(d["W"], float).reshape(d["dims"]), d["c"],
                   ControllerStructure(**d["structure"]), d["lo"], d["hi"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RbfControllerField":
        return cls.from_dict(json.loads(text))


def fit_field(snapshots, nodes, c: float | None = None, lo=None, hi=None) -> RbfControllerField:
    """Solve ``D W = M`` for the weights reproducing every snapshot at its node."""
    nodes = np.atleast_2d(np.asarray(nodes, float))
    if len(snapshots) != len(nodes) or not len(nodes):
        raise ShapeError("need one snapshot per node and at least one node")
    structure = snapshots[0].structure
    if any(s.structure != structure for s in snapshots):
        raise ShapeError("snapshots must share one controller structure")
    lo = nodes.min(axis=0) if lo is None else np.asarray(lo, float)
    hi = nodes.max(axis=0) if hi is None else np.asarray(hi, float)
    box = UnitBox(lo, hi)
    U = box.to_unit(nodes)
    if c is None:
        c = default_shape(U)
    if not c > 0:
        raise ValueError("shape constant c must be positive")
    M = np.array([s.matrix().ravel() for s in snapshots])
    D = _distances(U, U, c)
    rcond = 1.0 / np.linalg.cond(D, 1)
    if not rcond >= RCOND_MIN:
        raise ConditioningError(
            f"RBF distance matrix is near singular (rcond {rcond:.2e}); "
            "increase c or prune nearly coincident nodes")
    W = lu_solve(lu_factor(D, check_finite=False), M)
    field = RbfControllerField(nodes, W, c, structure, lo, hi, rcond)
    # rcond above the gate does not guarantee exact reproduction of the snapshots;
    # check through the query path itself, whose summation order differs from D @ W
    recon = np.array([field.matrix(p).ravel() for p in nodes])
    residual = float(np.max(np.abs(recon - M)))
    if not residual <= RESIDUAL_MAX:
        raise ConditioningError(
            f"RBF weights reproduce the snapshots only to {residual:.1e} "
            f"(rcond {rcond:.2e}); increase c or prune nearly coincident nodes")
    return field


def query_field(field: RbfControllerField, p) -> ControllerParam:
    p = np.asarray(p, float).reshape(-1)
    outside = bool(np.any(p < field.lo) or np.any(p > field.hi))
    return ControllerParam.from_matrix(field.structure, field.matrix(p), extrapolated=outside)
