"""Closed-loop performance costs built from system norms of channel pairs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError, ShapeError
from .lti import StateSpaceModel, gen_h2_norm, h2_norm, hinf_norm, spectral_abscissa

NORMS = ("hinf", "h2", "gen_h2")


@dataclass(frozen=True)
class CostTerm:
    inputs: tuple
    outputs: tuple
    norm: str = "hinf"
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "inputs", _as_names(self.inputs))
        object.__setattr__(self, "outputs", _as_names(self.outputs))
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        if not self.weight >= 0:
            raise ValueError("term weights must be nonnegative")


def _as_names(x) -> tuple:
    return (x,) if isinstance(x, str) else tuple(x)


@dataclass(frozen=True)
class CostSpec:
    """Weighted norms of closed-loop channel pairs, combined by max or sum."""

    terms: tuple
    combine: str = "max"
    hinf_tol: float = 1e-5

    def __post_init__(self):
        terms = tuple(t if isinstance(t, CostTerm) else CostTerm(**t) for t in self.terms)
        if not terms:
            raise ValueError("a cost needs at least one term")
        if self.combine not in ("max", "sum"):
            raise ValueError("combine must be 'max' or 'sum'")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def hinf(cls, inputs="w", outputs="z") -> "CostSpec":
        return cls((CostTerm(inputs, outputs, "hinf"),))

    def to_dict(self) -> dict:
        return {"terms": [{"inputs": list(t.inputs), "outputs": list(t.outputs),
                           "norm": t.norm, "weight": t.weight} for t in self.terms],
                "combine": self.combine, "hinf_tol": self.hinf_tol}

    @classmethod
    def from_dict(cls, d: dict) -> "CostSpec":
        return cls(tuple(CostTerm(**t) for t in d["terms"]), d.get("combine", "max"),
                   d.get("hinf_tol", 1e-5))

    def validate(self, sys: StateSpaceModel):
        for t in self.terms:
            sub = sys.select(t.inputs, t.outputs)
            if t.norm != "hinf" and np.any(sub.D != 0):
                raise ShapeError(f"{t.norm} term {t.inputs}->{t.outputs} needs zero feedthrough")


def term_values(closed: StateSpaceModel, spec: CostSpec) -> list:
    """Weighted value of every term (assumes a stable closed loop)."""
    out = []
    for t in spec.terms:
        if t.weight == 0:
            out.append(0.0)
            continue
        sub = closed.select(t.inputs, t.outputs)
        if t.norm == "hinf":
            v = hinf_norm(sub, spec.hinf_tol)
        elif t.norm == "h2":
            v = h2_norm(sub)
        else:
            v = gen_h2_norm(sub)
        out.append(t.weight * v)
    return out


def closed_loop_cost(closed: StateSpaceModel, spec: CostSpec) -> float:
    """Cost of a closed loop, ``inf`` when it is not Hurwitz."""
    if closed.n_states and spectral_abscissa(closed.A) >= 0:
        return np.inf
    try:
        vals = term_values(closed, spec)
    except NumericalError:
        return np.inf
    return float(max(vals) if spec.combine == "max" else sum(vals))


def aggregate(values: Sequence[float], how: str = "max") -> float:
    values = list(values)
    if how == "max":
        return float(max(values))
    if how == "sum":
        return float(sum(values))
    raise ValueError("aggregate must be 'max' or 'sum'")
