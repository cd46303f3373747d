"""System model: scenario, M-PSK constellations, Rayleigh channels, AWGN.

The receiver has no equalizer for the anonymous schemes: each designated
receive antenna is demodulated on its own by phase sector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import RANK_RTOL, orthonormal_range_basis

__all__ = [
    "Constellation",
    "psk_constellation",
    "modulate",
    "demodulate",
    "ci_margin",
    "AliasPolicy",
    "Scenario",
    "ScenarioError",
    "ChannelSet",
    "sample_channel_set",
    "NoiseModel",
    "noise_for_snr",
    "add_awgn",
    "anonymity_dimension",
]

_PSK_OFFSET = {2: 0.0, 4: math.pi / 4, 8: math.pi / 8}


class ScenarioError(ValueError):
    """A scenario violates one of its structural invariants."""


@dataclass(frozen=True)
class Constellation:
    order: int
    points: np.ndarray = field(repr=False)
    ci_half_angle: float
    bit_map: tuple[int, ...] = field(repr=False)
    phase_offset: float = 0.0

    @property
    def bits_per_symbol(self) -> int:
        return self.order.bit_length() - 1

    def bits(self, index: int) -> str:
        return format(self.bit_map[index], f"0{self.bits_per_symbol}b")


def psk_constellation(order: int) -> Constellation:
    """Unit-energy M-PSK with Gray labels.

    Point ``m`` sits at phase ``2*pi*m/M + offset`` (offset 0, pi/4, pi/8
    for BPSK, QPSK, 8PSK) and carries the label ``m ^ (m >> 1)``, so QPSK
    index 0 is ``(1+1j)/sqrt(2)`` with bits ``00``.
    """
    if order not in _PSK_OFFSET:
        raise ValueError(f"unsupported PSK order {order}; expected 2, 4 or 8")
    offset = _PSK_OFFSET[order]
    m = np.arange(order)
    points = np.exp(1j * (2 * np.pi * m / order + offset))
    # snap exact axis values so BPSK is {+1, -1} and QPSK is (+-1 +- 1j)/sqrt(2)
    points = np.round(points.real, 15) + 1j * np.round(points.imag, 15)
    gray = tuple(int(i ^ (i >> 1)) for i in m)
    return Constellation(order, points, math.pi / order, gray, offset)


def modulate(indices, c: Constellation) -> np.ndarray:
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= c.order):
        raise IndexError(f"symbol index out of range for {c.order}-PSK")
    return c.points[idx]


def demodulate(received, c: Constellation) -> np.ndarray:
    """Phase-sector decision.

    Sector ``m`` is the half-open arc ``[phi_m - pi/M, phi_m + pi/M)``; a
    phase exactly on a boundary therefore goes to the counterclockwise
    neighbour.
    """
    received = np.asarray(received)
    width = 2 * np.pi / c.order
    phase = np.angle(received) - c.phase_offset + np.pi / c.order
    return np.floor(np.mod(phase, 2 * np.pi) / width).astype(int) % c.order


def ci_margin(u, theta: float):
    """Distance of ``u`` (rotated onto the positive real axis) to the nearer
    sector boundary; positive iff ``u`` lies strictly inside the sector."""
    u = np.asarray(u)
    return u.real * math.sin(theta) - np.abs(u.imag) * math.cos(theta)


@dataclass(frozen=True)
class AliasPolicy:
    mode: str = "all"  # "all" | "random_one" | "fixed"
    fixed_set: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in ("all", "random_one", "fixed"):
            raise ScenarioError(f"unknown alias policy {self.mode!r}")
        if self.mode == "fixed" and not self.fixed_set:
            raise ScenarioError("alias policy 'fixed' needs a nonempty alias set")

    def max_size(self, k_candidates: int) -> int:
        if self.mode == "all":
            return k_candidates - 1
        if self.mode == "random_one":
            return 1
        return len(self.fixed_set)

    def choose(self, k_candidates: int, true_sender: int, rng: np.random.Generator) -> tuple[int, ...]:
        """Alias indices for one transmission; never contains ``true_sender``."""
        others = [j for j in range(k_candidates) if j != true_sender]
        if self.mode == "all":
            return tuple(others)
        if self.mode == "random_one":
            return (others[int(rng.integers(len(others)))],)
        return tuple(sorted(j for j in set(self.fixed_set) if j != true_sender))


def anonymity_dimension(n_tx: int, n_rx: int, n_aliases: int) -> int:
    """Generic dimension of the anonymity subspace."""
    return n_tx - n_aliases * (n_rx - n_tx)


@dataclass(frozen=True)
class Scenario:
    k_candidates: int
    n_tx: int
    n_rx: int
    n_streams: int
    constellation: Constellation
    power_watts: float = 1.0
    alias_policy: AliasPolicy = field(default_factory=AliasPolicy)
    block_length: int = 1
    fixed_channels: bool = False

    def __post_init__(self):
        if self.k_candidates < 2:
            raise ScenarioError("need at least 2 candidate senders (K >= 2)")
        if self.n_tx < 1 or self.n_streams < 1:
            raise ScenarioError("antenna and stream counts must be positive")
        if self.n_tx >= self.n_rx:
            raise ScenarioError(
                f"N_t < N_r violated (nt={self.n_tx}, nr={self.n_rx}): the reconstruction "
                "detector needs tall channels"
            )
        if self.n_streams > self.n_tx:
            raise ScenarioError(f"streams exceeds transmit antennas: d <= N_t violated")
        if not self.power_watts > 0:
            raise ScenarioError("power budget must be positive")
        if self.block_length < 1:
            raise ScenarioError("block_length must be at least 1")
        policy = self.alias_policy
        if policy.mode == "fixed":
            bad = [j for j in policy.fixed_set if not 0 <= j < self.k_candidates]
            if bad:
                raise ScenarioError(f"alias indices out of range: {bad}")
        n_alias = policy.max_size(self.k_candidates)
        dim = anonymity_dimension(self.n_tx, self.n_rx, n_alias)
        if self.n_streams > dim:
            raise ScenarioError(
                "streams exceeds anonymity dimension: d <= N_t - |A|(N_r - N_t) violated "
                f"({self.n_streams} > {self.n_tx} - {n_alias}*({self.n_rx} - {self.n_tx}) = {dim})"
            )


@dataclass(frozen=True)
class ChannelSet:
    """Candidate channels with cached range bases and projectors."""

    channels: np.ndarray  # (K, N_r, N_t)
    bases: np.ndarray = field(repr=False)  # (K, N_r, N_t)
    projectors: np.ndarray = field(repr=False)  # (K, N_r, N_r)

    @classmethod
    def from_channels(cls, channels) -> "ChannelSet":
        channels = np.asarray(channels, dtype=complex)
        if channels.ndim != 3:
            raise ValueError("channels must be a (K, N_r, N_t) stack")
        if not _full_column_rank(channels).all():
            raise ValueError("channel is not full column rank")
        bases = np.stack([orthonormal_range_basis(H) for H in channels])
        projectors = bases @ bases.conj().transpose(0, 2, 1)
        return cls(channels, bases, projectors)

    def __len__(self) -> int:
        return self.channels.shape[0]

    def __getitem__(self, j: int) -> np.ndarray:
        return self.channels[j]


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)


def _full_column_rank(stack: np.ndarray) -> np.ndarray:
    sv = np.linalg.svd(stack, compute_uv=False)
    return sv[:, -1] > RANK_RTOL * sv[:, 0]


def sample_channel_set(s: Scenario, seed, max_retries: int = 16) -> ChannelSet:
    """I.i.d. CN(0, 1) channel matrices for all K candidates.

    ``seed`` is an integer or a ``numpy.random.Generator``. All K matrices
    are drawn in one call; a rank-deficient matrix is redrawn in place.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    H = _crandn(rng, (s.k_candidates, s.n_rx, s.n_tx))
    for _ in range(max_retries):
        U, sv, _ = np.linalg.svd(H, full_matrices=False)
        bad = sv[:, -1] <= RANK_RTOL * sv[:, 0]
        if not bad.any():
            bases = U
            projectors = bases @ bases.conj().transpose(0, 2, 1)
            return ChannelSet(H, bases, projectors)
        for j in np.flatnonzero(bad):
            H[j] = _crandn(rng, (s.n_rx, s.n_tx))
    raise RuntimeError("could not draw a full-rank channel")


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("noise variance must be positive")


def noise_for_snr(power_watts: float, snr_db: float) -> NoiseModel | None:
    """Per-antenna noise for ``SNR = P / sigma^2``; ``None`` when noiseless."""
    if math.isinf(snr_db) and snr_db > 0:
        return None
    return NoiseModel(power_watts / 10.0 ** (snr_db / 10.0))


def add_awgn(y, noise: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    y = np.asarray(y, dtype=complex)
    return y + math.sqrt(noise.sigma2) * _crandn(rng, y.shape)
