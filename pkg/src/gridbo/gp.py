"""Gaussian process surrogate with a Matern-5/2 kernel and zero prior mean.

Inputs are mapped affinely onto the unit box of the search domain before the
kernel is evaluated, so a single length scale is meaningful even when the
domain's axes have very different ranges.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.optimize import minimize

from .errors import ConditioningError, FitError

JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
TAGS = ("initial-random", "bo-query", "allocation")


@dataclass
class ObservationSet:
    """Observed costs ``gamma_i`` at points ``theta_i``; infinite values allowed."""

    points: np.ndarray
    values: np.ndarray
    tags: list = field(default_factory=list)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.points.shape[0] != self.values.size:
            raise ValueError("points and values must have equal length")
        if not self.tags:
            self.tags = ["initial-random"] * self.values.size
        if len(self.tags) != self.values.size:
            raise ValueError("one tag per observation required")
        if np.any(np.isnan(self.values)):
            raise ValueError("NaN cost observations are not allowed")

    @classmethod
    def empty(cls, dim: int) -> "ObservationSet":
        return cls(np.zeros((0, dim)), np.zeros(0), [])

    def __len__(self):
        return self.values.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def append(self, point, value, tag="bo-query") -> "ObservationSet":
        return ObservationSet(np.vstack([self.points, np.reshape(point, (1, -1))]),
                              np.append(self.values, float(value)), self.tags + [tag])

    def extend(self, other: "ObservationSet") -> "ObservationSet":
        return ObservationSet(np.vstack([self.points, other.points]),
                              np.concatenate([self.values, other.values]),
                              self.tags + other.tags)

    @property
    def finite(self) -> "ObservationSet":
        mask = np.isfinite(self.values)
        return ObservationSet(self.points[mask].reshape(-1, self.dim), self.values[mask],
                              [t for t, keep in zip(self.tags, mask) if keep])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"theta_{i + 1}" for i in range(self.dim)] + ["gamma", "tag"])
        for p, v, t in zip(self.points, self.values, self.tags):
            w.writerow([repr(float(x)) for x in p] + [repr(float(v)), t])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ObservationSet":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        d = len(header) - 2
        pts = np.array([[float(x) for x in r[:d]] for r in body]).reshape(-1, d)
        return cls(pts, np.array([float(r[d]) for r in body]), [r[d + 1] for r in body])


@dataclass(frozen=True)
class GpHyperparams:
    lambda1: float = 1.0
    lambda2: float = 1.0
    noise_jitter: float = 0.0

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0 and self.noise_jitter >= 0):
            raise ValueError(f"invalid hyperparameters {self}")


def _matern52_from_dist(d, lambda1, lambda2):
    r = np.sqrt(5.0) * d / lambda2
    return lambda1 ** 2 * (1.0 + r + r * r / 3.0) * np.exp(-r)


def kernel_matern52(theta, theta_tilde, hyper: GpHyperparams) -> float:
    d = np.linalg.norm(np.asarray(theta, float) - np.asarray(theta_tilde, float))
    return float(_matern52_from_dist(d, hyper.lambda1, hyper.lambda2))


def _pairwise(X, Y):
    diff = X[:, None, :] - Y[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def gram(X, hyper: GpHyperparams, Y=None) -> np.ndarray:
    return _matern52_from_dist(_pairwise(X, X if Y is None else Y), hyper.lambda1, hyper.lambda2)


class UnitBox:
    """Affine map of a box ``[lo, hi]`` onto ``[0, 1]^d`` (flat axes map to 0)."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float).reshape(-1)
        self.hi = np.asarray(hi, dtype=float).reshape(-1)
        width = self.hi - self.lo
        self.scale = np.where(width > 0, width, 1.0)

    def to_unit(self, X):
        return (np.asarray(X, dtype=float) - self.lo) / self.scale

    def from_unit(self, U):
        return self.lo + np.asarray(U, dtype=float) * np.where(self.hi > self.lo, self.scale, 0.0)

    @property
    def diameter(self) -> float:
        return float(np.sqrt(np.sum(self.hi > self.lo))) or 1.0


def _cholesky(K):
    try:
        return cholesky(K, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None


def log_marginal_likelihood(hyper: GpHyperparams, data: ObservationSet, box: UnitBox | None = None) -> float:
    """``-1/2 (G^T K^-1 G + log det K + N log 2 pi)`` with ``K = K_TT + jitter I``."""
    data = data.finite
    if len(data) < 1:
        raise ValueError("need at least one finite observation")
    X = box.to_unit(data.points) if box is not None else data.points
    K = gram(X, hyper) + hyper.noise_jitter * np.eye(len(data))
    L = _cholesky(K)
    if L is None or np.any(np.diag(L) <= 0):
        raise ConditioningError("Gram matrix is not positive definite")
    return _lml_from_chol(L, data.values)


def _lml_from_chol(L, y):
    alpha = cho_solve((L, True), y, check_finite=False)
    n = y.size
    return float(-0.5 * (y @ alpha + 2.0 * np.sum(np.log(np.diag(L))) + n * np.log(2 * np.pi)))


def _factor_with_ladder(X, lambda1, lambda2):
    K = gram(X, GpHyperparams(lambda1, lambda2))
    eye = np.eye(K.shape[0])
    for rel in JITTER_LADDER:
        jitter = rel * lambda1 ** 2
        L = _cholesky(K + jitter * eye)
        if L is not None and np.all(np.diag(L) > 0):
            return L, jitter
    raise ConditioningError("Gram matrix not positive definite at maximum jitter")


class GpModel:
    """Posterior of a zero-mean GP conditioned on the finite observations."""

    def __init__(self, data: ObservationSet, hyper: GpHyperparams, box: UnitBox | None = None,
                 escalate: bool = False):
        self.data = data.finite
        if len(self.data) < 1:
            raise ValueError("GP needs at least one finite observation")
        self.box = box if box is not None else UnitBox(np.zeros(data.dim), np.ones(data.dim))
        self._X = self.box.to_unit(self.data.points)
        if escalate:
            L, jitter = _factor_with_ladder(self._X, hyper.lambda1, hyper.lambda2)
            hyper = replace(hyper, noise_jitter=max(jitter, hyper.noise_jitter))
        K = gram(self._X, hyper) + hyper.noise_jitter * np.eye(len(self.data))
        L = _cholesky(K)
        if L is None or np.any(np.diag(L) <= 0):
            raise ConditioningError("Gram matrix is not positive definite")
        self.hyper = hyper
        self._L = L
        self._alpha = cho_solve((L, True), self.data.values, check_finite=False)

    @property
    def gamma_plus(self) -> float:
        return float(np.max(self.data.values))

    def predict(self, Q):
        """Posterior mean and standard deviation at the rows of ``Q``."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        U = self.box.to_unit(Q)
        Ks = gram(self._X, self.hyper, U)
        mu = Ks.T @ self._alpha
        v = np.linalg.solve(self._L, Ks) if Ks.size else Ks
        var = self.hyper.lambda1 ** 2 - np.sum(v * v, axis=0)
        return mu, np.sqrt(np.maximum(var, 0.0))

    def log_marginal_likelihood(self) -> float:
        return _lml_from_chol(self._L, self.data.values)


def posterior(model: GpModel, query):
    mu, sigma = model.predict(np.reshape(query, (1, -1)))
    return float(mu[0]), float(sigma[0])


def hyper_bounds(data: ObservationSet, box: UnitBox):
    y = data.finite.values
    scale = float(np.std(y))
    if not scale > 0:
        scale = float(np.max(np.abs(y))) if y.size and np.max(np.abs(y)) > 0 else 1.0
    diam = box.diameter
    return (1e-3 * scale, 1e3 * scale), (1e-2 * diam, 10.0 * diam)


def fit(data: ObservationSet, restarts: int = 5, seed=0, box: UnitBox | None = None) -> GpModel:
    """Maximum-likelihood hyperparameters by multi-start bounded search in log space.

    The search is derivative-free (Powell's conjugate-direction coordinate
    search), and each trial escalates jitter along ``JITTER_LADDER`` when the
    Gram matrix fails to factorize.
    """
    data = data.finite
    if len(data) < 2:
        raise ValueError("fit needs at least two finite observations")
    if box is None:
        box = UnitBox(data.points.min(axis=0), data.points.max(axis=0))
    X = box.to_unit(data.points)
    y = data.values
    (l1lo, l1hi), (l2lo, l2hi) = hyper_bounds(data, box)
    bounds = [(np.log(l1lo), np.log(l1hi)), (np.log(l2lo), np.log(l2hi))]

    def neg_lml(z):
        try:
            L, _ = _factor_with_ladder(X, np.exp(z[0]), np.exp(z[1]))
        except ConditioningError:
            return 1e300
        return -_lml_from_chol(L, y)

    rng = np.random.default_rng(seed)
    starts = [np.array([np.log(max(np.sqrt(np.mean(y * y)), l1lo)), np.log(0.5 * box.diameter)])]
    starts += [rng.uniform([b[0] for b in bounds], [b[1] for b in bounds]) for _ in range(max(restarts - 1, 0))]
    best = None
    for z0 in starts:
        z0 = np.clip(z0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(neg_lml, z0, method="Powell", bounds=bounds,
                       options={"xtol": 1e-4, "ftol": 1e-9, "maxfev": 400})
        if res.fun < 1e300 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise FitError("all hyperparameter restarts failed to factorize the Gram matrix")
    hyper = GpHyperparams(float(np.exp(best.x[0])), float(np.exp(best.x[1])))
    return GpModel(data, hyper, box, escalate=True)
