"""Dense complex linear algebra kernels and a small convex solver.

Everything here is a pure function of its inputs. Matrices are plain
numpy arrays; rank decisions use a relative singular-value threshold of
``RANK_RTOL`` times the largest singular value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "RANK_RTOL",
    "pseudo_inverse",
    "orthonormal_range_basis",
    "projector",
    "null_space_basis",
    "realify",
    "QpSolution",
    "min_norm_qp",
    "BisectionReport",
    "BisectionError",
    "bisect_max_margin",
]

RANK_RTOL = 1e-10


def _as_matrix(H) -> np.ndarray:
    H = np.asarray(H)
    if H.ndim == 1:
        H = H[:, np.newaxis]
    if H.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {H.shape}")
    return H


def _rank(s: np.ndarray) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > RANK_RTOL * s[0]))


def pseudo_inverse(H) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via the thin SVD.

    Singular values below ``RANK_RTOL * s_max`` are treated as zero, so
    the result is well defined for rank-deficient and zero matrices.
    """
    H = _as_matrix(H)
    U, s, Vh = np.linalg.svd(H, full_matrices=False)
    r = _rank(s)
    return (Vh[:r].conj().T / s[:r]) @ U[:, :r].conj().T


def orthonormal_range_basis(H) -> np.ndarray:
    """Orthonormal basis (as columns) of the column space of ``H``."""
    H = _as_matrix(H)
    U, s, _ = np.linalg.svd(H, full_matrices=False)
    return U[:, : _rank(s)]


def projector(H) -> np.ndarray:
    """Orthogonal projector ``H H^+`` onto the column space of ``H``."""
    Q = orthonormal_range_basis(H)
    return Q @ Q.conj().T


def null_space_basis(M) -> np.ndarray:
    """Orthonormal basis of ``{x : M x = 0}``.

    Returns an ``cols(M) x nullity`` array; the width may be zero.
    """
    M = _as_matrix(M)
    n = M.shape[1]
    _, s, Vh = np.linalg.svd(M, full_matrices=True)
    r = _rank(s)
    return Vh[r:].conj().T.reshape(n, n - r)


def realify(a) -> np.ndarray:
    """Map complex vectors to ``[Re; Im]`` and matrices to the real block form.

    For a matrix ``M`` the block form ``[[Re M, -Im M], [Im M, Re M]]``
    satisfies ``realify(M @ v) == realify(M) @ realify(v)``.
    """
    a = np.asarray(a)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim == 1:
        return np.concatenate([a.real, a.imag]).astype(float)
    if a.ndim == 2:
        re, im = a.real, a.imag
        return np.block([[re, -im], [im, re]]).astype(float)
    raise ValueError(f"cannot realify array of shape {a.shape}")


# ---------------------------------------------------------------------------
# minimum-norm QP:  min ||z||^2  s.t.  C z >= b
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible"
    kkt_residual: float
    iterations: int
    multipliers: np.ndarray = field(repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _kkt_residual(C, b, z, lam) -> float:
    """Largest scaled violation among the four KKT conditions."""
    if C.shape[0] == 0:
        return float(np.linalg.norm(z, np.inf))
    slack = C @ z - b
    z_scale = 1.0 + np.linalg.norm(z, np.inf)
    lam_scale = 1.0 + np.linalg.norm(lam, np.inf)
    # stationarity of ||z||^2 reads 2z = C^T mu; lam holds mu / 2
    stationarity = np.linalg.norm(z - C.T @ lam, np.inf) / z_scale
    primal = max(0.0, float(np.max(-slack / (1.0 + np.abs(b)))))
    dual = max(0.0, float(-lam.min())) / lam_scale
    complementarity = float(np.abs(lam * slack).max()) / (lam_scale * (1.0 + np.abs(b).max()))
    return float(max(stationarity, primal, dual, complementarity))


def min_norm_qp(C, b, tol: float = 1e-10, max_iter: int | None = None) -> QpSolution:
    """Find the point of smallest Euclidean norm in ``{z : C z >= b}``.

    Dual active-set method (Goldfarb-Idnani with identity Hessian). It
    starts at the unconstrained minimiser ``z = 0`` and adds the most
    violated constraint each outer step, dropping active constraints whose
    multipliers would turn negative. An added constraint whose normal lies
    in the span of the active normals, with no droppable constraint left,
    certifies that the polyhedron is empty.

    Parameters
    ----------
    C : (m, n) array_like
        Constraint rows.
    b : (m,) array_like
        Right-hand side.
    tol : float
        Feasibility tolerance; also the target KKT residual.
    max_iter : int, optional
        Cap on add/drop steps. Defaults to ``50 * (m + n)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if C.ndim == 1:
        C = C[np.newaxis, :] if b.size == 1 else C[:, np.newaxis]
    m, n = C.shape
    if b.size != m:
        raise ValueError("C and b disagree on the number of constraints")
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite QP data")
    z = np.zeros(n)
    if m == 0:
        return QpSolution(z, 0.0, "optimal", 0.0, 0, np.zeros(0))

    if max_iter is None:
        max_iter = 50 * (m + n)
    row_norm = np.linalg.norm(C, axis=1)
    feas_tol = tol * (1.0 + np.abs(b))

    active: list[int] = []
    lam_active = np.zeros(0)
    iterations = 0

    def finish(status: str) -> QpSolution:
        nonlocal z
        lam = np.zeros(m)
        if status == "optimal":
            lam[active] = lam_active
            if active:
                # polish on the final active set to shed accumulated roundoff
                CA = C[active]
                lam_a, *_ = np.linalg.lstsq(CA @ CA.T, b[active], rcond=None)
                if np.all(lam_a >= 0):
                    z_new = CA.T @ lam_a
                    if np.all(C @ z_new - b >= -feas_tol):
                        z, lam[active] = z_new, lam_a
        obj = float(z @ z)
        resid = _kkt_residual(C, b, z, lam) if status == "optimal" else float("inf")
        return QpSolution(z.copy(), obj, status, resid, iterations, lam)

    while True:
        slack = C @ z - b
        violated = slack < -feas_tol
        if not violated.any():
            return finish("optimal")
        scaled = np.where(violated, slack / np.where(row_norm > 0, row_norm, 1.0), np.inf)
        p = int(np.argmin(scaled))
        c_p = C[p]
        if row_norm[p] == 0.0:
            # 0 >= b_p with b_p > 0
            return finish("infeasible")
        lam_p = 0.0

        while True:
            iterations += 1
            if iterations > max_iter:
                raise RuntimeError("min_norm_qp did not converge")
            if active:
                N = C[active].T
                r, *_ = np.linalg.lstsq(N, c_p, rcond=None)
                step = c_p - N @ r
            else:
                r = np.zeros(0)
                step = c_p.copy()

            # largest dual step before an active multiplier hits zero
            t_dual, drop = np.inf, -1
            for j in range(r.size):
                if r[j] > 1e-12 * row_norm[p]:
                    ratio = lam_active[j] / r[j]
                    if ratio < t_dual:
                        t_dual, drop = ratio, j

            step_sq = float(step @ step)
            if step_sq <= (1e-12 * row_norm[p]) ** 2:
                if drop < 0:
                    return finish("infeasible")
                lam_active = lam_active - t_dual * r
                lam_p += t_dual
                del active[drop]
                lam_active = np.delete(lam_active, drop)
                continue

            t_primal = (b[p] - c_p @ z) / step_sq
            t = min(t_dual, t_primal)
            z = z + t * step
            lam_active = lam_active - t * r
            lam_p += t
            if t_primal <= t_dual:
                active.append(p)
                lam_active = np.append(lam_active, lam_p)
                break
            del active[drop]
            lam_active = np.delete(lam_active, drop)


# ---------------------------------------------------------------------------
# margin bisection
# ---------------------------------------------------------------------------


class BisectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class BisectionReport:
    t_star: float
    z_star: np.ndarray | None
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    evaluations: int


def _eval(fn, t):
    out = fn(t)
    if isinstance(out, tuple):
        power, z = out
    else:
        power, z = out, None
    return float(power), z


def bisect_max_margin(
    feasible_power_at: Callable[[float], float | tuple[float, np.ndarray | None]],
    budget: float,
    t_hi_seed: float = 1.0,
    tol: float = 1e-9,
    max_doublings: int = 60,
) -> BisectionReport:
    """Largest margin ``t`` whose minimum power fits in ``budget``.

    ``feasible_power_at(t)`` returns the minimum power needed for margin
    ``t`` (``inf`` when no point achieves it), optionally paired with the
    witnessing point as ``(power, z)``. It must be nondecreasing in ``t``.
    The upper bracket starts at ``t_hi_seed`` and doubles until infeasible;
    plain bisection then shrinks the bracket to width ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if t_hi_seed <= 0:
        raise ValueError("t_hi_seed must be positive")
    evaluations = 0

    p0, z_lo = _eval(feasible_power_at, 0.0)
    evaluations += 1
    if p0 > budget:
        raise ValueError("zero margin already exceeds the power budget")
    lo, hi = 0.0, float(t_hi_seed)
    lowers, uppers = [lo], []

    doublings = 0
    while True:
        p, z = _eval(feasible_power_at, hi)
        evaluations += 1
        if p > budget:
            break
        lo, z_lo = hi, z
        lowers.append(lo)
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            raise BisectionError(f"margin still feasible after {max_doublings} doublings")
    uppers.append(hi)

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        p, z = _eval(feasible_power_at, mid)
        evaluations += 1
        if p <= budget:
            lo, z_lo = mid, z
            lowers.append(lo)
        else:
            hi = mid
            uppers.append(hi)

    return BisectionReport(lo, z_lo, tuple(lowers), tuple(uppers), evaluations)
