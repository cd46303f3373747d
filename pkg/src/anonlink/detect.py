"""The curious receiver: reconstruction-distance sender detection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .airlink import ChannelSet

__all__ = [
    "DEFAULT_TIE_TOL",
    "DetectionReport",
    "residuals",
    "tie_group",
    "declare",
    "posterior",
    "anonymity_entropy",
    "detect",
]

DEFAULT_TIE_TOL = 1e-9


@dataclass(frozen=True)
class DetectionReport:
    residuals: np.ndarray
    declared: int
    posterior: np.ndarray
    entropy_bits: float
    tie_group: tuple[int, ...]


def residuals(y, channels: ChannelSet) -> np.ndarray:
    """Distance from ``y`` to its reconstruction through each candidate channel.

    Reconstructing through ``H_j`` (pseudo-inverse estimate, then
    re-propagation) is the projection ``P_j y``, so ``d_j = ||y - P_j y||``.
    A ``(N_r, L)`` block of received vectors gives the Frobenius distance.
    """
    y = np.asarray(y)
    diff = y - channels.projectors @ y
    return np.linalg.norm(diff.reshape(len(channels), -1), axis=1)


def tie_group(res, tie_tol: float = DEFAULT_TIE_TOL) -> tuple[int, ...]:
    res = np.asarray(res, dtype=float)
    d_min = res.min()
    return tuple(int(j) for j in np.flatnonzero(res <= d_min + tie_tol * (1.0 + d_min)))


def declare(res, tie_tol: float = DEFAULT_TIE_TOL, rng: np.random.Generator | None = None) -> int:
    """Index of the smallest residual, breaking ties uniformly at random."""
    group = tie_group(res, tie_tol)
    if len(group) == 1:
        return group[0]
    if rng is None:
        raise ValueError("a generator is needed to break a tie")
    return group[int(rng.integers(len(group)))]


def posterior(res, sigma2: float) -> np.ndarray:
    """Gaussian residual likelihood ``p_j ~ exp(-d_j^2 / sigma^2)``, normalized."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    logl = -np.asarray(res, dtype=float) ** 2 / sigma2
    w = np.exp(logl - logl.max())
    return w / w.sum()


def anonymity_entropy(p) -> float:
    """Shannon entropy in bits, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(max(0.0, -np.sum(nz * np.log2(nz))))


def detect(
    y,
    channels: ChannelSet,
    sigma2: float | None,
    rng: np.random.Generator | None = None,
    tie_tol: float = DEFAULT_TIE_TOL,
) -> DetectionReport:
    """Run the full receiver on ``y``.

    ``sigma2=None`` means a noiseless link; the posterior is then the
    zero-noise limit, uniform over the tie group.
    """
    res = residuals(y, channels)
    group = tie_group(res, tie_tol)
    declared = declare(res, tie_tol, rng)
    if sigma2 is None:
        post = np.zeros(len(channels))
        post[list(group)] = 1.0 / len(group)
    else:
        post = posterior(res, sigma2)
    return DetectionReport(res, declared, post, anonymity_entropy(post), group)
