"""Grid-point allocation: alternate between finding the most informative
uncertainty / scheduling point for the current controller and re-synthesizing
the controller on the enlarged selection.
"""
from __future__ import annotations

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .bayesopt import AcquisitionConfig, bo_find_most_informative
from .costs import CostSpec, closed_loop_cost
from .errors import AllocationError, NumericalError, ShapeError, StabilityError, SynthesisError
from .gp import ObservationSet
from .lfr import DeltaStructure, LfrPlant, corner_points, evaluate_local, sample_domain
from .lti import lyapunov_solve, spectral_abscissa
from .rbf import fit_field
from .synthesis import (ControllerParam, ControllerStructure, SynthesisOptions, close_loop,
                        synthesize)

log = logging.getLogger(__name__)

DISTINCT_TOL = 1e-9
EARLY_STOP_RATIO = 1.01
EARLY_STOP_PATIENCE = 2


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for a sub-task, reproducible from ``(seed, keys)``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass
class Selection:
    """Ordered, pairwise distinct grid points inside a Delta domain."""

    domain: DeltaStructure
    points: np.ndarray = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        pts = np.zeros((0, self.domain.n_blocks)) if self.points is None else self.points
        pts = np.atleast_2d(np.asarray(pts, float)).reshape(-1, self.domain.n_blocks)
        for p in pts:
            self.domain.check(p)
        for i, j in itertools.combinations(range(len(pts)), 2):
            if np.max(np.abs(pts[i] - pts[j])) < DISTINCT_TOL:
                raise ValueError(f"selection points {i} and {j} coincide")
        self.points = pts
        if not self.history:
            self.history = [(0, float("nan"))] * len(pts)

    def __len__(self):
        return len(self.points)

    def contains(self, point) -> bool:
        p = np.asarray(point, float).reshape(1, -1)
        return bool(len(self) and np.min(np.max(np.abs(self.points - p), axis=1)) < DISTINCT_TOL)

    def add(self, point, iteration: int, cost: float) -> "Selection":
        p = self.domain.check(point)
        if self.contains(p):
            raise ValueError("point already in selection")
        return Selection(self.domain, np.vstack([self.points, p]),
                         self.history + [(int(iteration), float(cost))])

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_spec(), "points": self.points.tolist(),
                "history": [list(h) for h in self.history]}

    @classmethod
    def from_dict(cls, d: dict) -> "Selection":
        return cls(DeltaStructure.from_spec(d["domain"]), np.array(d["points"], float).reshape(
            -1, len(d["domain"])), [tuple(h) for h in d.get("history", [])])


def evaluate_cost(plant: LfrPlant, point, k, spec: CostSpec) -> float:
    """Closed-loop cost at one grid point; ``inf`` when unstable or ill-posed.

    ``k`` is a :class:`ControllerParam` or anything with ``at(point)``
    returning one (an interpolated LPV controller).
    """
    local = evaluate_local(plant, point)
    try:
        cl = close_loop(local, k.at(point))
    except NumericalError:
        return np.inf
    return closed_loop_cost(cl, spec)


def local_models(plant: LfrPlant, points):
    return [evaluate_local(plant, p) for p in np.atleast_2d(points)]


# ---------------------------------------------------------------- controllers on a selection

@dataclass
class LpvDesign:
    """Gridded LPV design: shared controller, per-node snapshots and their RBF field."""

    shared: ControllerParam
    snapshots: list
    field: object

    def at(self, point):
        return self.field.at(point)


def synthesize_on(plant: LfrPlant, selection: Selection, structure: ControllerStructure,
                  cost: CostSpec, opts: SynthesisOptions, warm=None, refine_budget: int = 0):
    """Controller for every point of ``selection``.

    Robust plants get one shared controller.  LPV plants get the shared
    design followed by per-node refinements warm-started from it, fused into
    an RBF field over the plant's scheduling box.
    """
    locals_ = local_models(plant, selection.points)
    warm_k = warm.shared if isinstance(warm, LpvDesign) else warm
    shared = synthesize(locals_, structure, cost, opts, warm_k)
    if plant.kind != "lpv":
        return shared
    snaps = []
    for i, local in enumerate(locals_):
        k_i = shared
        if refine_budget > 0:
            node_opts = SynthesisOptions(restarts=1, budget=refine_budget,
                                         seed=derive_seed(opts.seed, 7, i), margin=opts.margin,
                                         init_scale=opts.init_scale)
            try:
                k_i = synthesize([local], structure, cost, node_opts, shared)
            except SynthesisError:
                k_i = shared
        snaps.append(k_i)
    fld = fit_field(snaps, selection.points, lo=plant.lo, hi=plant.hi)
    return LpvDesign(shared, snaps, fld)


def max_cost_on(plant, selection, k, spec) -> float:
    return max(evaluate_cost(plant, p, k, spec) for p in selection.points)


def random_init(plant: LfrPlant, n0: int, structure: ControllerStructure, cost: CostSpec,
                seed: int = 0, opts: SynthesisOptions | None = None, refine_budget: int = 0):
    """``n0`` uniform points and a controller synthesized on them."""
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    pts = sample_domain(plant.structure, n0, derive_seed(seed, 1))
    sel = Selection(plant.structure, pts)
    return sel, _init_controller(plant, sel, structure, cost, seed, opts, refine_budget)


def corner_init(plant: LfrPlant, structure: ControllerStructure, cost: CostSpec, seed: int = 0,
                opts: SynthesisOptions | None = None, with_midpoint: bool = False,
                refine_budget: int = 0):
    """Minimum and maximum corners of the domain (and optionally its centre)."""
    pts = corner_points(plant.structure)
    if with_midpoint:
        pts = np.vstack([pts[:1], 0.5 * (pts[0] + pts[1]), pts[1:]])
    sel = Selection(plant.structure, pts)
    return sel, _init_controller(plant, sel, structure, cost, seed, opts, refine_budget)


def explicit_init(plant, points, structure, cost, seed=0, opts=None, refine_budget=0):
    sel = Selection(plant.structure, points)
    return sel, _init_controller(plant, sel, structure, cost, seed, opts, refine_budget)


def _init_controller(plant, sel, structure, cost, seed, opts, refine_budget):
    opts = SynthesisOptions(**{**(opts or SynthesisOptions()).to_dict(), "seed": derive_seed(seed, 2)})
    return synthesize_on(plant, sel, structure, cost, opts, None, refine_budget)


# ---------------------------------------------------------------- allocation loop

@dataclass
class AllocationResult:
    selection: Selection
    controller: object
    trace: list
    stopped_early: bool = False
    reason: str = ""


def allocate(plant: LfrPlant, cost: CostSpec, theta0: Selection, k0, n_target: int,
             bo_cfg: AcquisitionConfig, synth_opts: SynthesisOptions | None = None,
             structure: ControllerStructure | None = None, seed: int = 0,
             refine_budget: int = 0, early_stop: bool = True) -> AllocationResult:
    """Grow ``theta0`` to ``n_target`` points, one most informative point at a time.

    Each iteration builds a fresh observation set under the current
    controller (``bo_cfg.n_initial`` uniform points plus the current
    selection), asks Bayesian optimization for the maximizer of the cost,
    adds it and re-synthesizes (warm-started).  Iteration stops early once
    the predicted maximum stays within 1% of the selection's own worst cost
    for two consecutive iterations.
    """
    if len(theta0) < 1:
        raise ValueError("initial selection must be nonempty")
    synth_opts = synth_opts or SynthesisOptions()
    k = k0
    structure = structure or _structure_of(k0)
    sel = theta0
    trace: list = []
    stale = 0
    lo, hi = plant.lo, plant.hi
    iteration = 0
    while len(sel) < n_target:
        iteration += 1

        def objective(theta, _k=k):
            return evaluate_cost(plant, theta, _k, cost)

        sel_costs = np.array([objective(p) for p in sel.points])
        if not np.all(np.isfinite(sel_costs)):
            raise AllocationError("controller is not finite-cost on its own selection", sel, trace, k)
        j_sel = float(np.max(sel_costs))

        result, theta_star = None, None
        for attempt in range(2):
            data = _seed_observations(plant, sel, sel_costs, objective, bo_cfg,
                                      derive_seed(seed, 3, iteration, attempt))
            cfg = bo_cfg.with_seed(derive_seed(seed, 4, iteration, attempt))
            result = bo_find_most_informative(objective, lo, hi, data, cfg)
            theta_star = np.clip(result.theta_star, lo, hi)
            if not sel.contains(theta_star):
                break
            log.info("iteration %d: BO returned a selected point; re-querying", iteration)
            theta_star = None
        if theta_star is None:
            return AllocationResult(sel, k, trace, True, "duplicate point returned twice")

        j_before = objective(theta_star)
        predicted = result.predicted_max
        if early_stop and np.isfinite(j_before) and np.isfinite(predicted) \
                and predicted < EARLY_STOP_RATIO * j_sel:
            stale += 1
        else:
            stale = 0
        if stale >= EARLY_STOP_PATIENCE:
            log.info("iteration %d: no significant cost increase predicted; stopping", iteration)
            return AllocationResult(sel, k, trace, True, "no significant cost increase")

        sel = sel.add(theta_star, iteration, j_before)
        opts = SynthesisOptions(**{**synth_opts.to_dict(), "seed": derive_seed(seed, 5, iteration)})
        try:
            k = synthesize_on(plant, sel, structure, cost, opts, k, refine_budget)
        except SynthesisError as exc:
            raise AllocationError(f"synthesis failed at iteration {iteration}: {exc}",
                                  sel, trace, k) from exc
        j_after = max_cost_on(plant, sel, k, cost)
        trace.append({"iteration": iteration, "theta": theta_star.tolist(), "J_before": j_before,
                      "J_after": j_after, "size": len(sel), "J_selection": j_sel,
                      "predicted_max": predicted, "bo_evaluations": result.evaluations,
                      "bo_miss": bool(np.isfinite(j_before) and j_before < j_sel - 1e-6)})
        log.info("iteration %d: theta*=%s J_before=%.6g J_after=%.6g", iteration,
                 np.array2string(theta_star, precision=4), j_before, j_after)
    return AllocationResult(sel, k, trace, False, "target size reached")


def _structure_of(k):
    return k.shared.structure if isinstance(k, LpvDesign) else k.structure


def _seed_observations(plant, sel, sel_costs, objective, cfg, seed) -> ObservationSet:
    pts = sample_domain(plant.structure, cfg.n_initial, seed)
    vals = [objective(p) for p in pts]
    data = ObservationSet(pts, vals, ["initial-random"] * len(pts))
    return data.extend(ObservationSet(sel.points, sel_costs, ["allocation"] * len(sel)))


# ---------------------------------------------------------------- analysis

def common_lyapunov_heuristic(a_cl_list, tol: float = 1e-9):
    """Average of per-matrix Lyapunov solutions, if it certifies the whole family.

    Returns ``X`` when ``X > 0`` and ``A_i^T X + X A_i < -tol I`` for all
    ``i``, else ``None`` (inconclusive).
    """
    mats = [np.asarray(a, float) for a in a_cl_list]
    if not mats:
        raise ValueError("need at least one matrix")
    for a in mats:
        if spectral_abscissa(a) >= 0:
            raise StabilityError("all matrices must be Hurwitz")
    n = mats[0].shape[0]
    X = sum(lyapunov_solve(a, np.eye(n)) for a in mats) / len(mats)
    X = 0.5 * (X + X.T)
    if np.min(np.linalg.eigvalsh(X)) <= 0:
        return None
    for a in mats:
        L = a.T @ X + X @ a
        if np.max(np.linalg.eigvalsh(0.5 * (L + L.T))) >= -tol:
            return None
    return X


def sweep_points(structure: DeltaStructure, density: int, seed: int = 0,
                 max_dense_dim: int = 4) -> np.ndarray:
    """Regular grid (first axis slowest) or a Latin hypercube above ``max_dense_dim``."""
    if density < 2:
        raise ValueError("grid density must be >= 2")
    d = structure.n_blocks
    if d <= max_dense_dim:
        axes = [np.linspace(lo, hi, density) for lo, hi in zip(structure.lo, structure.hi)]
        return np.array(list(itertools.product(*axes)))
    sampler = qmc.LatinHypercube(d=d, seed=seed)
    return qmc.scale(sampler.random(density ** 2), structure.lo, structure.hi)


def worst_case_sweep(plant: LfrPlant, k, cost: CostSpec, grid_density: int, seed: int = 0):
    """Cost over a sweep of the domain: ``(theta_worst, j_worst, table)``.

    ``table`` has one row per point: coordinates followed by the cost.
    """
    pts = sweep_points(plant.structure, grid_density, seed)
    vals = np.array([evaluate_cost(plant, p, k, cost) for p in pts])
    i = int(np.argmax(vals))
    return pts[i].copy(), float(vals[i]), np.column_stack([pts, vals])


def trace_to_csv(trace, dim: int | None = None) -> str:
    """Allocation trace as CSV; ``dim`` fixes the theta columns of an empty trace."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if dim is None:
        dim = len(trace[0]["theta"]) if trace else 0
    w.writerow(["iteration"] + [f"theta_{i + 1}" for i in range(dim)]
               + ["J_before", "J_after", "size", "predicted_max", "bo_miss"])
    for row in trace:
        w.writerow([row["iteration"]] + [repr(float(t)) for t in row["theta"]]
                   + [repr(float(row["J_before"])), repr(float(row["J_after"])), row["size"],
                      repr(float(row["predicted_max"])), int(row["bo_miss"])])
    return buf.getvalue()


def table_to_csv(table, names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(names) + ["J"])
    for row in table:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()
