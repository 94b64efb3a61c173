"""Uncertain / LPV plants as linear fractional representations.

A plant is a nominal LTI block ``G`` whose ``delta`` channels are closed by a
block-diagonal matrix ``diag(theta_1 I_n1, ..., theta_r I_nr)``.  Fixing the
point ``theta`` gives the local LTI model ``P_theta``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .lti import StateSpaceModel, redheffer_star

DELTA = "delta"


@dataclass(frozen=True)
class DeltaBlock:
    name: str
    rep: int = 1
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if int(self.rep) < 1:
            raise ShapeError(f"block {self.name!r}: repetitions must be >= 1")
        if not self.lo < self.hi:
            raise DomainError(f"block {self.name!r}: need lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class DeltaStructure:
    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @classmethod
    def from_spec(cls, spec: Sequence) -> "DeltaStructure":
        """Build from ``[{"name", "rep", "lo", "hi"}, ...]`` or block tuples."""
        blocks = []
        for b in spec:
            if isinstance(b, DeltaBlock):
                blocks.append(b)
            elif isinstance(b, dict):
                blocks.append(DeltaBlock(b["name"], int(b.get("rep", 1)),
                                         float(b.get("lo", -1.0)), float(b.get("hi", 1.0))))
            else:
                blocks.append(DeltaBlock(*b))
        return cls(tuple(blocks))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def dim(self) -> int:
        return sum(b.rep for b in self.blocks)

    @property
    def lo(self) -> np.ndarray:
        return np.array([b.lo for b in self.blocks])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b.hi for b in self.blocks])

    @property
    def names(self) -> list:
        return [b.name for b in self.blocks]

    def check(self, point) -> np.ndarray:
        theta = np.asarray(point, dtype=float).reshape(-1)
        if theta.size != self.n_blocks:
            raise ShapeError(f"point has {theta.size} components, structure has {self.n_blocks} blocks")
        for value, b in zip(theta, self.blocks):
            if not (b.lo <= value <= b.hi):
                raise DomainError(f"block {b.name!r}: {value} outside [{b.lo}, {b.hi}]")
        return theta

    def to_spec(self) -> list:
        return [{"name": b.name, "rep": b.rep, "lo": b.lo, "hi": b.hi} for b in self.blocks]


def delta_matrix(structure: DeltaStructure, point) -> np.ndarray:
    """``diag(theta_1 I_n1, ..., theta_r I_nr)`` after a domain check."""
    theta = structure.check(point)
    return np.diag(np.repeat(theta, [b.rep for b in structure.blocks]))


@dataclass(frozen=True, eq=False)
class LfrPlant:
    """Nominal block ``G`` with a ``delta`` loop, plus the Delta structure.

    ``replication`` (optional, shape ``dim x n_zdelta``) maps the physical
    ``z_delta`` outputs of ``G`` onto the repeated channels of the structure,
    ``w_delta = Delta(theta) @ replication @ z_delta``.  It is folded into
    ``G`` at construction, so ``G`` always exposes square delta channels.
    """

    G: StateSpaceModel
    structure: DeltaStructure
    kind: str = "robust"
    replication: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("robust", "lpv"):
            raise ValueError(f"kind must be 'robust' or 'lpv', got {self.kind!r}")
        G = self.G
        if DELTA not in G.input_groups or DELTA not in G.output_groups:
            raise ShapeError("plant G needs a 'delta' input and output group")
        if self.replication is not None:
            G = _fold_replication(G, np.asarray(self.replication, dtype=float))
            object.__setattr__(self, "G", G)
            object.__setattr__(self, "replication", None)
        n_in = G.input_groups[DELTA][1]
        n_out = G.output_groups[DELTA][1]
        if n_in != n_out:
            raise ShapeError(f"delta channels are not square ({n_out} -> {n_in})")
        if n_in != self.structure.dim:
            raise ShapeError(f"delta width {n_in} != structure dimension {self.structure.dim}")

    @property
    def lo(self) -> np.ndarray:
        return self.structure.lo

    @property
    def hi(self) -> np.ndarray:
        return self.structure.hi

    def to_dict(self) -> dict:
        d = self.G.to_dict()
        d["delta_blocks"] = self.structure.to_spec()
        d["kind"] = self.kind
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LfrPlant":
        G = StateSpaceModel.from_dict(d)
        rep = d.get("replication")
        return cls(G, DeltaStructure.from_spec(d["delta_blocks"]), d.get("kind", "robust"),
                   None if rep is None else np.array(rep, dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LfrPlant":
        return cls.from_dict(json.loads(text))


def _fold_replication(G: StateSpaceModel, R: np.ndarray) -> StateSpaceModel:
    start, width = G.output_groups[DELTA]
    if R.ndim != 2 or R.shape[1] != width:
        raise ShapeError(f"replication must have {width} columns, got shape {R.shape}")
    rows = slice(start, start + width)
    C = np.vstack([G.C[:start], R @ G.C[rows], G.C[start + width:]])
    D = np.vstack([G.D[:start], R @ G.D[rows], G.D[start + width:]])
    shift = R.shape[0] - width
    groups = {}
    for name, (s, n) in G.output_groups.items():
        if name == DELTA:
            groups[name] = (s, R.shape[0])
        elif s > start:
            groups[name] = (s + shift, n)
        else:
            groups[name] = (s, n)
    return StateSpaceModel(G.A, G.B, C, D, G.input_groups, groups)


def evaluate_local(plant: LfrPlant, point) -> StateSpaceModel:
    """Local LTI model ``Delta(theta) * G`` over the remaining channels."""
    return redheffer_star(delta_matrix(plant.structure, point), plant.G, (DELTA, DELTA))


def sample_domain(structure: DeltaStructure, count: int, seed) -> np.ndarray:
    """``count`` i.i.d. uniform points in the box, shape ``(count, n_blocks)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(structure.lo, structure.hi, size=(count, structure.n_blocks))


def corner_points(structure: DeltaStructure) -> np.ndarray:
    """The minimum and maximum corners of the box."""
    return np.vstack([structure.lo, structure.hi])


def affine_lfr(nominal: StateSpaceModel, terms: Sequence, kind: str = "lpv",
               rank_tol: float = 1e-12) -> LfrPlant:
    """LFR of ``M(p) = M0 + sum_i p_i M_i`` with ``D_dd = 0``.

    ``nominal`` supplies ``M0 = [[A, B], [C, D]]`` and the channel groups.
    Each term is ``(name, lo, hi, Mi)`` with ``Mi`` the same shape as ``M0``;
    ``Mi`` is factored ``Li @ Ri`` by SVD and the block is repeated
    ``rank(Mi)`` times.
    """
    n, m, p = nominal.n_states, nominal.n_inputs, nominal.n_outputs
    lefts, rights, blocks = [], [], []
    for name, lo, hi, Mi in terms:
        Mi = np.asarray(Mi, dtype=float)
        if Mi.shape != (n + p, n + m):
            raise ShapeError(f"term {name!r} has shape {Mi.shape}, expected {(n + p, n + m)}")
        U, s, Vt = np.linalg.svd(Mi)
        r = int(np.sum(s > rank_tol * max(s[0], 1.0))) if s.size else 0
        if r == 0:
            raise ShapeError(f"term {name!r} is identically zero")
        lefts.append(U[:, :r] * s[:r])
        rights.append(Vt[:r])
        blocks.append(DeltaBlock(name, r, float(lo), float(hi)))
    L = np.hstack(lefts)
    R = np.vstack(rights)
    nd = L.shape[1]
    A = nominal.A
    B = np.hstack([L[:n], nominal.B])
    C = np.vstack([R[:, :n], nominal.C])
    D = np.zeros((nd + p, nd + m))
    D[:nd, nd:] = R[:, n:]
    D[nd:, :nd] = L[n:]
    D[nd:, nd:] = nominal.D
    ig = {DELTA: (0, nd)}
    ig.update({k: (s + nd, ln) for k, (s, ln) in nominal.input_groups.items()})
    og = {DELTA: (0, nd)}
    og.update({k: (s + nd, ln) for k, (s, ln) in nominal.output_groups.items()})
    return LfrPlant(StateSpaceModel(A, B, C, D, ig, og), DeltaStructure(tuple(blocks)), kind)
