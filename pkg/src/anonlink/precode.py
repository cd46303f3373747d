"""Sender-side precoders.

Baselines (SVD, ZF, MMSE) ignore anonymity. The two anonymous precoders
restrict the transmit vector to the subspace on which every alias channel
reconstructs the received signal exactly as the true channel does, so the
receiver's reconstruction residuals cannot tell the candidates apart:

* ``im_anonymous_precoder`` zero-forces the inter-antenna interference on
  the designated receive antennas inside that subspace (closed form);
* ``ci_anonymous_precoder`` maximizes the constructive-interference margin
  inside that subspace under the power budget (bisection over a
  minimum-norm QP).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .airlink import ChannelSet, Constellation
from .numerics import (
    bisect_max_margin,
    min_norm_qp,
    null_space_basis,
    pseudo_inverse,
    realify,
)

__all__ = [
    "PrecoderInfeasible",
    "PrecodeResult",
    "AnonymitySubspace",
    "anonymity_subspace",
    "im_anonymous_precoder",
    "ci_constraints",
    "ci_min_power",
    "ci_anonymous_precoder",
    "svd_precoder",
    "zf_precoder",
    "mmse_precoder",
    "anonymity_residuals",
]


class PrecoderInfeasible(ValueError):
    """The requested precoder has no valid solution for this geometry."""


@dataclass(frozen=True)
class PrecodeResult:
    x: np.ndarray
    gain_or_margin: float
    feasible: bool = True
    diagnostics: dict[str, Any] = field(default_factory=dict, repr=False)
    anonymity_set: tuple[int, ...] = ()

    @property
    def power(self) -> float:
        return float(np.vdot(self.x, self.x).real)


@dataclass(frozen=True)
class AnonymitySubspace:
    basis: np.ndarray  # (N_t, r), orthonormal columns

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def _residual_maps(channels: ChannelSet, k: int, aliases) -> np.ndarray:
    """Stack of ``(I - P_j) H_k`` over the alias indices."""
    Hk = channels[k]
    blocks = [Hk - channels.projectors[j] @ Hk for j in aliases]
    return np.vstack(blocks)


def anonymity_subspace(channels: ChannelSet, k: int, aliases) -> AnonymitySubspace:
    """Transmit directions that every alias explains as well as the true sender.

    For ``x`` in the returned span, ``(I - P_j) H_k x = 0`` for each alias
    ``j``: the residual of hypothesis ``j`` equals that of hypothesis ``k``
    (both zero) in the noiseless received signal.
    """
    aliases = tuple(aliases)
    if not aliases:
        raise ValueError("alias set must be nonempty")
    if k in aliases:
        raise ValueError("alias set must not contain the true sender")
    B = null_space_basis(_residual_maps(channels, k, aliases))
    if B.shape[1] == 0:
        raise PrecoderInfeasible("anonymity subspace is empty for this geometry")
    return AnonymitySubspace(B)


def _anon_set(k, aliases):
    return tuple(sorted((k, *aliases)))


def im_anonymous_precoder(
    channels: ChannelSet, k: int, aliases, s, power: float
) -> PrecodeResult:
    """Interference-mitigation precoder restricted to the anonymity subspace.

    ``x = g B G^+ s`` with ``G`` the designated rows of ``H_k B``; the noiseless
    designated receive entries equal ``g * s`` and ``||x||^2 = power``.
    """
    s = np.asarray(s, dtype=complex)
    d = s.shape[0]
    sub = anonymity_subspace(channels, k, aliases)
    if d > sub.dim:
        raise PrecoderInfeasible(f"{d} streams do not fit a {sub.dim}-dim anonymity subspace")
    G = channels[k][:d] @ sub.basis
    if np.linalg.matrix_rank(G) < d:
        raise PrecoderInfeasible("designated effective channel is rank deficient")
    v = sub.basis @ (pseudo_inverse(G) @ s)
    norm_v = np.linalg.norm(v, axis=0)
    g = math.sqrt(power) / norm_v
    x = v * g
    gain = float(np.min(g))
    return PrecodeResult(
        x,
        gain,
        diagnostics={"subspace_dim": sub.dim, "gain": g},
        anonymity_set=_anon_set(k, aliases),
    )


def ci_constraints(G, s, theta: float) -> np.ndarray:
    """Real constraint rows ``C`` such that ``C realify(z) >= t`` encodes a CI
    margin of at least ``t`` on every designated antenna.

    Row pairs per antenna ``i``: with ``u_i = conj(s_i) (G z)_i``,
    ``sin(theta) Re u_i -/+ cos(theta) Im u_i``.
    """
    A = np.conj(np.asarray(s))[:, None] * np.asarray(G)
    AR = realify(A)
    d = A.shape[0]
    re_rows, im_rows = AR[:d], AR[d:]
    st, ct = math.sin(theta), math.cos(theta)
    return np.vstack([st * re_rows - ct * im_rows, st * re_rows + ct * im_rows])


def ci_min_power(G, s, theta: float, margin: float, tol: float = 1e-10):
    """Minimum power reaching CI margin ``margin``; ``inf`` when unreachable.

    Returns ``(power, z)`` with ``z`` complex (``None`` when unreachable).
    """
    C = ci_constraints(G, s, theta)
    sol = min_norm_qp(C, np.full(C.shape[0], float(margin)), tol=tol)
    if not sol.optimal:
        return math.inf, None
    r = C.shape[1] // 2
    return sol.objective, sol.z[:r] + 1j * sol.z[r:]


def _ci_solve(G, s, theta, power, tol, method):
    if method == "direct":
        return bisect_max_margin(lambda t: ci_min_power(G, s, theta, t), power, tol=tol)
    if method != "homogeneous":
        raise ValueError(f"unknown CI solve method {method!r}")
    # margin constraints are positively homogeneous: the min-norm point for
    # margin t is t times the one for margin 1
    unit_power, unit_z = ci_min_power(G, s, theta, 1.0)

    def power_at(t):
        if t == 0.0:
            return 0.0, np.zeros(G.shape[1], dtype=complex)
        if unit_z is None:
            return math.inf, None
        return t * t * unit_power, t * unit_z

    return bisect_max_margin(power_at, power, tol=tol)


def ci_anonymous_precoder(
    channels: ChannelSet,
    k: int,
    aliases,
    s,
    power: float,
    c: Constellation,
    tol: float = 1e-9,
    method: str = "homogeneous",
) -> PrecodeResult:
    """Constructive-interference precoder restricted to the anonymity subspace.

    Maximizes the smallest CI margin across designated antennas subject to
    ``||x||^2 <= power``. ``aliases`` may be empty, in which case the whole
    transmit space is used. ``method="direct"`` re-solves the QP at every
    bisection step instead of rescaling the unit-margin solution.
    """
    s = np.asarray(s, dtype=complex)
    d = s.shape[0]
    aliases = tuple(aliases)
    Hk = channels[k]
    if aliases:
        B = anonymity_subspace(channels, k, aliases).basis
    else:
        B = np.eye(Hk.shape[1], dtype=complex)
    G = Hk[:d] @ B
    rep = _ci_solve(G, s, c.ci_half_angle, power, tol, method)
    z = rep.z_star if rep.z_star is not None else np.zeros(B.shape[1], dtype=complex)
    x = B @ z
    return PrecodeResult(
        x,
        rep.t_star,
        diagnostics={"subspace_dim": B.shape[1], "evaluations": rep.evaluations, "bisection": rep},
        anonymity_set=_anon_set(k, aliases) if aliases else (),
    )


def svd_precoder(H, s, power: float) -> PrecodeResult:
    """Transmit along the top ``d`` right singular vectors.

    The diagnostics carry the matching receive-side equalizer
    (``U_d``, ``sigma_d``, ``scale``).
    """
    H = np.asarray(H)
    s = np.asarray(s, dtype=complex)
    d = s.shape[0]
    U, sv, Vh = np.linalg.svd(H, full_matrices=False)
    if d > int(np.count_nonzero(sv > 1e-10 * sv[0])):
        raise PrecoderInfeasible("channel rank below stream count")
    scale = math.sqrt(power) / np.linalg.norm(s, axis=0)
    x = (Vh[:d].conj().T @ s) * scale
    return PrecodeResult(
        x, float(np.min(scale)), diagnostics={"U_d": U[:, :d], "sigma_d": sv[:d], "scale": scale}
    )


def _designated_right_inverse_check(HD):
    if np.linalg.matrix_rank(HD) < HD.shape[0]:
        raise PrecoderInfeasible("designated channel rows are rank deficient")


def zf_precoder(H, s, power: float) -> PrecodeResult:
    """Zero-forcing on the designated rows: noiseless ``y_i = g s_i``."""
    s = np.asarray(s, dtype=complex)
    HD = np.asarray(H)[: s.shape[0]]
    _designated_right_inverse_check(HD)
    w = pseudo_inverse(HD) @ s
    g = math.sqrt(power) / np.linalg.norm(w, axis=0)
    return PrecodeResult(w * g, float(np.min(g)), diagnostics={"gain": g})


def mmse_precoder(H, s, power: float, sigma2: float) -> PrecodeResult:
    """Regularized ZF, ``w = H_D^H (H_D H_D^H + d sigma^2/P I)^-1 s``."""
    s = np.asarray(s, dtype=complex)
    d = s.shape[0]
    HD = np.asarray(H)[:d]
    _designated_right_inverse_check(HD)
    reg = d * sigma2 / power
    w = HD.conj().T @ np.linalg.solve(HD @ HD.conj().T + reg * np.eye(d), s)
    scale = math.sqrt(power) / np.linalg.norm(w, axis=0)
    return PrecodeResult(w * scale, float(np.min(scale)), diagnostics={"scale": scale})


def anonymity_residuals(channels: ChannelSet, k: int, x) -> np.ndarray:
    """``||(I - P_j) H_k x||`` for every candidate ``j`` (noiseless)."""
    y = channels[k] @ np.asarray(x)
    r = y - channels.projectors @ y
    return np.linalg.norm(r.reshape(len(channels), -1), axis=1)
