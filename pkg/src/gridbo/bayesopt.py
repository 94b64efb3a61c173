"""Expected-improvement Bayesian optimization for cost *maximization*."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import erfc

from .gp import GpModel, ObservationSet, UnitBox, fit

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class AcquisitionConfig:
    epsilon: float = 0.3
    n_max: int = 20
    n_initial: int = 5
    multistart_count: int = 32
    local_steps: int = 30
    gp_restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        for name in ("n_max", "n_initial", "multistart_count", "local_steps", "gp_restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def with_seed(self, seed) -> "AcquisitionConfig":
        return replace(self, seed=int(seed))


PROFILES = {
    "unbalanced_disk": AcquisitionConfig(epsilon=0.3, n_max=20, n_initial=5),
    "satellite": AcquisitionConfig(epsilon=0.5, n_max=30, n_initial=20),
    "robot_arm": AcquisitionConfig(epsilon=0.7, n_max=40, n_initial=20),
}


def _norm_cdf(z):
    return 0.5 * erfc(-z / SQRT2)


def _norm_pdf(z):
    return INV_SQRT_2PI * np.exp(-0.5 * z * z)


def expected_improvement(mu, sigma, gamma_plus, epsilon):
    """EI of exceeding ``gamma_plus + epsilon``; zero where ``sigma == 0``.

    Works elementwise on arrays; scalars in, float out.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    improve = mu - gamma_plus - epsilon
    pos = sigma > 0
    safe = np.where(pos, sigma, 1.0)
    # beyond |z| = 40 the normal tails are exactly 0 or 1 in double precision,
    # so a subnormal sigma overflowing to +-inf is harmless
    with np.errstate(over="ignore"):
        z = np.clip(improve / safe, -40.0, 40.0)
    ei = np.where(pos, improve * _norm_cdf(z) + safe * _norm_pdf(z), 0.0)
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def _pattern_search(f, u0, steps, lo_step=1e-4, free=None):
    """Compass search maximizing ``f`` on the unit box; returns (u, f(u))."""
    u = np.array(u0, dtype=float)
    fu = f(u[None, :])[0]
    dim = u.size
    free = np.ones(dim, bool) if free is None else free
    step = 0.25
    for _ in range(steps):
        if step < lo_step:
            break
        improved = False
        cands = []
        for i in np.flatnonzero(free):
            for s in (step, -step):
                c = u.copy()
                c[i] = np.clip(c[i] + s, 0.0, 1.0)
                cands.append(c)
        if not cands:
            break
        cands = np.array(cands)
        vals = f(cands)
        j = int(np.argmax(vals))
        if vals[j] > fu:
            u, fu = cands[j], vals[j]
            improved = True
        if not improved:
            step *= 0.5
    return u, fu


def _maximize_on_box(f, box: UnitBox, count, steps, rng, extra_starts=None):
    dim = box.lo.size
    free = box.hi > box.lo
    starts = rng.uniform(0.0, 1.0, size=(count, dim))
    starts[:, ~free] = 0.0
    if extra_starts is not None and len(extra_starts):
        starts = np.vstack([starts, np.clip(box.to_unit(extra_starts), 0.0, 1.0)])
    seed_vals = f(starts)
    best_u, best_v = None, -np.inf
    for u0 in starts:
        u, v = _pattern_search(f, u0, steps, free=free)
        if v > best_v:
            best_u, best_v = u, v
    # refinement never loses to a seed; guard ties from flat regions
    k = int(np.argmax(seed_vals))
    if seed_vals[k] > best_v:
        best_u, best_v = starts[k], seed_vals[k]
    return box.from_unit(best_u), float(best_v)


def maximize_acquisition(model: GpModel, lo, hi, cfg: AcquisitionConfig, seed=None):
    """Point in ``[lo, hi]`` with the largest expected improvement, and that EI."""
    box = UnitBox(lo, hi)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    gp = model.gamma_plus

    def ei_unit(U):
        mu, s = model.predict(box.from_unit(U))
        return expected_improvement(mu, s, gp, cfg.epsilon)

    theta, value = _maximize_on_box(ei_unit, box, cfg.multistart_count, cfg.local_steps, rng)
    return np.clip(theta, box.lo, box.hi), value


def maximize_mean(model: GpModel, lo, hi, cfg: AcquisitionConfig, seed=None):
    box = UnitBox(lo, hi)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)

    def mean_unit(U):
        return model.predict(box.from_unit(U))[0]

    theta, value = _maximize_on_box(mean_unit, box, cfg.multistart_count, cfg.local_steps, rng,
                                    extra_starts=model.data.points)
    return np.clip(theta, box.lo, box.hi), value


class BoResult(NamedTuple):
    theta_star: np.ndarray
    data: ObservationSet
    trace: list
    predicted_max: float
    evaluations: int


def _safe_eval(objective, theta) -> float:
    try:
        value = float(objective(theta))
    except Exception as exc:  # any failure to evaluate is an unbounded cost
        log.debug("cost evaluation failed at %s: %s", theta, exc)
        return np.inf
    return value if not np.isnan(value) else np.inf


def bo_find_most_informative(objective: Callable[[np.ndarray], float], lo, hi,
                             data: ObservationSet, cfg: AcquisitionConfig) -> BoResult:
    """Predict the maximizer of ``objective`` over the box ``[lo, hi]``.

    Runs GP fit / EI maximization / true evaluation until the observation set
    holds ``cfg.n_max`` entries, then returns the maximizer of the posterior
    mean.  The first point with an infinite cost is returned right away.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    box = UnitBox(lo, hi)
    rng = np.random.default_rng(cfg.seed)
    trace = []

    if len(data) and not np.all(np.isfinite(data.values)):
        k = int(np.flatnonzero(~np.isfinite(data.values))[0])
        return BoResult(data.points[k].copy(), data, trace, np.inf, 0)
    if len(data.finite) < 2:
        raise ValueError("BO needs at least two finite observations to start")

    evaluations = 0
    iteration = 0
    while len(data) < cfg.n_max:
        model = fit(data, cfg.gp_restarts, rng.integers(2 ** 32), box)
        theta_hat, ei = maximize_acquisition(model, lo, hi, cfg, seed=rng.integers(2 ** 32))
        gamma_hat = _safe_eval(objective, theta_hat)
        evaluations += 1
        data = data.append(theta_hat, gamma_hat, "bo-query")
        finite = data.values[np.isfinite(data.values)]
        trace.append({"iteration": iteration, "theta": theta_hat.tolist(), "ei": ei,
                      "gamma": gamma_hat, "gamma_plus": float(np.max(finite)) if finite.size else np.inf})
        iteration += 1
        if not np.isfinite(gamma_hat):
            log.info("unbounded cost at %s; returning it as most informative", theta_hat)
            return BoResult(theta_hat, data, trace, np.inf, evaluations)

    model = fit(data, cfg.gp_restarts, rng.integers(2 ** 32), box)
    theta_star, mu_star = maximize_mean(model, lo, hi, cfg, seed=rng.integers(2 ** 32))
    return BoResult(theta_star, data, trace, mu_star, evaluations)
