import numpy as np
import pytest

from gridbo.lti import StateSpaceModel


def random_stable(rng, n, m, p, feedthrough=True, margin=0.05):
    """Random stable realization with eigenvalues shifted left of ``-margin``."""
    A = rng.normal(size=(n, n))
    shift = np.max(np.linalg.eigvals(A).real) + margin + rng.uniform(0, 1)
    A = A - shift * np.eye(n)
    B = rng.normal(size=(n, m))
    C = rng.normal(size=(p, n))
    D = rng.normal(size=(p, m)) if feedthrough else np.zeros((p, m))
    return StateSpaceModel(A, B, C, D)


def sweep_peak(sys, n=2000):
    """Largest singular value over a log-spaced sweep plus DC."""
    from gridbo.lti import eval_freq

    w = np.concatenate([[0.0], np.logspace(-3, 3, n)])
    return max(np.linalg.svd(eval_freq(sys, wi), compute_uv=False)[0] for wi in w)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
