"""Independent reference computations used only by the tests."""

import itertools

import numpy as np


def qp_enumeration(C, b, tol=1e-9):
    """Min-norm point of {C z >= b} by trying every active set.

    For each subset S the least-norm solution of C_S z = b_S is formed with
    numpy's lstsq; consistent, feasible candidates compete on norm.
    Returns ``None`` when no candidate is feasible.
    """
    C = np.asarray(C, float)
    b = np.asarray(b, float)
    m, n = C.shape
    best = None
    for size in range(0, min(m, n) + 1):
        for S in itertools.combinations(range(m), size):
            S = list(S)
            if S:
                z, *_ = np.linalg.lstsq(C[S], b[S], rcond=None)
                if np.linalg.norm(C[S] @ z - b[S]) > 1e-8 * (1 + np.linalg.norm(b[S])):
                    continue
            else:
                z = np.zeros(n)
            if np.all(C @ z >= b - tol * (1 + np.abs(b))):
                if best is None or z @ z < best @ best - 1e-15:
                    best = z
    return best


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_qp(rng):
    m = int(rng.integers(1, 7))
    n = int(rng.integers(1, 5))
    C = rng.standard_normal((m, n))
    b = rng.standard_normal(m)
    return C, b


def grid_max_margin(power_at, budget, step, t_max):
    """Largest grid point ``t`` (spacing ``step``) with ``power_at(t) <= budget``."""
    best = 0.0
    for t in np.arange(0.0, t_max + step, step):
        if power_at(t) <= budget:
            best = t
        else:
            break
    return best
