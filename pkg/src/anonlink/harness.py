"""Monte Carlo engine for detection-error and symbol-error rates.

Every trial owns a private generator seeded from
``trial_seed(master, precoder, snr_index, trial_index)``, so a sweep is a
pure function of its inputs regardless of how trials are spread across
worker processes.

Seed derivation (all arithmetic modulo 2**64)::

    splitmix64(x):
        z = x + 0x9E3779B97F4A7C15
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    trial_seed(master, p, i, t):
        h = splitmix64(master)
        h = splitmix64(h ^ p)
        h = splitmix64(h ^ i)
        h = splitmix64(h ^ t)
        return h

with ``p`` the precoder code (svd=0, zf=1, mmse=2, im_anon=3, ci_anon=4),
``i`` the SNR grid index and ``t`` the trial index. The 64-bit result
seeds ``numpy.random.default_rng`` (PCG64). In fixed-channel mode the
channel draw uses its own seed ``trial_seed(master, 2**64 - 1, 0, 0)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import detect as det
from .airlink import Scenario, demodulate, modulate, noise_for_snr, add_awgn, sample_channel_set
from .precode import (
    PrecoderInfeasible,
    ci_anonymous_precoder,
    im_anonymous_precoder,
    mmse_precoder,
    svd_precoder,
    zf_precoder,
)

__all__ = [
    "PRECODER_IDS",
    "ANONYMOUS",
    "splitmix64",
    "trial_seed",
    "TrialOutcome",
    "run_trial",
    "wilson_interval",
    "CellResult",
    "SweepResult",
    "run_sweep",
]

PRECODER_IDS = ("svd", "zf", "mmse", "im_anon", "ci_anon")
PRECODER_CODE = {name: i for i, name in enumerate(PRECODER_IDS)}
ANONYMOUS = frozenset({"im_anon", "ci_anon"})

_MASK = (1 << 64) - 1
FIXED_CHANNEL_STREAM = _MASK


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def trial_seed(master: int, precoder_code: int, snr_index: int, trial_index: int) -> int:
    h = splitmix64(master & _MASK)
    for word in (precoder_code, snr_index, trial_index):
        h = splitmix64(h ^ (word & _MASK))
    return h


@dataclass(frozen=True)
class TrialOutcome:
    true_sender: int
    declared: int
    detection_error: bool
    symbol_errors: int
    n_symbols: int
    entropy_bits: float
    margin_or_gain: float
    feasible: bool = True


def _precode_block(precoder_id, scenario, channels, k, aliases, S, sigma2):
    """Transmit block ``X`` (N_t x L) and the smallest gain/margin."""
    H = channels[k]
    P = scenario.power_watts
    if precoder_id == "svd":
        res = svd_precoder(H, S, P)
    elif precoder_id == "zf":
        res = zf_precoder(H, S, P)
    elif precoder_id == "mmse":
        res = mmse_precoder(H, S, P, sigma2)
    elif precoder_id == "im_anon":
        if not aliases:
            raise PrecoderInfeasible("no alias available")
        res = im_anonymous_precoder(channels, k, aliases, S, P)
    elif precoder_id == "ci_anon":
        if not aliases:
            raise PrecoderInfeasible("no alias available")
        cols = [
            ci_anonymous_precoder(channels, k, aliases, S[:, l], P, scenario.constellation)
            for l in range(S.shape[1])
        ]
        X = np.stack([c.x for c in cols], axis=1)
        return X, min(c.gain_or_margin for c in cols)
    else:
        raise ValueError(f"unknown precoder {precoder_id!r}")
    return res.x, res.gain_or_margin


def _equalize(precoder_id, channels, declared, y, d):
    """Baseline receive processing with the declared sender's channel."""
    if precoder_id == "svd":
        U, sv, _ = np.linalg.svd(channels[declared], full_matrices=False)
        return (U[:, :d].conj().T @ y) / sv[:d, None]
    # ZF/MMSE pre-equalize at the transmitter; the receiver denoises by
    # reconstructing through the declared channel
    return (channels.projectors[declared] @ y)[:d]


def run_trial(
    scenario: Scenario,
    precoder_id: str,
    snr_db: float,
    seed: int,
    channel_seed: int | None = None,
    tie_tol: float = det.DEFAULT_TIE_TOL,
) -> TrialOutcome:
    """One fading block: channels, sender, symbols, precoding, noise, detection.

    ``snr_db=inf`` runs a noiseless link. ``channel_seed`` pins the
    channels (fixed-channel mode); otherwise they come from the trial's own
    generator.
    """
    rng = np.random.default_rng(seed)
    s = scenario
    if channel_seed is None:
        channels = sample_channel_set(s, rng)
    else:
        channels = sample_channel_set(s, channel_seed)
    k = int(rng.integers(s.k_candidates))
    d, L = s.n_streams, s.block_length
    idx = rng.integers(s.constellation.order, size=(d, L))
    S = modulate(idx, s.constellation)
    aliases = s.alias_policy.choose(s.k_candidates, k, rng)
    noise = noise_for_snr(s.power_watts, snr_db)
    sigma2 = None if noise is None else noise.sigma2

    try:
        X, metric = _precode_block(
            precoder_id, s, channels, k, aliases, S, 0.0 if sigma2 is None else sigma2
        )
    except PrecoderInfeasible:
        return TrialOutcome(k, -1, False, 0, 0, 0.0, 0.0, feasible=False)

    Y = channels[k] @ X
    if noise is not None:
        Y = add_awgn(Y, noise, rng)
    report = det.detect(Y, channels, sigma2, rng, tie_tol)

    if precoder_id in ANONYMOUS:
        soft = Y[:d]
    else:
        soft = _equalize(precoder_id, channels, report.declared, Y, d)
    errors = int(np.count_nonzero(demodulate(soft, s.constellation) != idx))
    return TrialOutcome(
        true_sender=k,
        declared=report.declared,
        detection_error=report.declared != k,
        symbol_errors=errors,
        n_symbols=d * L,
        entropy_bits=report.entropy_bits,
        margin_or_gain=float(metric),
    )


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not 0 <= successes <= n:
        raise ValueError("need n >= 1 and 0 <= successes <= n")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == n else min(1.0, center + half)
    return lo, hi


@dataclass(frozen=True)
class CellResult:
    snr_db: float
    precoder: str
    trials: int
    detection_errors: int
    symbol_errors: int
    symbols: int
    entropy_sum: float
    infeasible: int
    seed: int
    z: float = 1.96

    @property
    def der(self) -> float:
        return self.detection_errors / self.trials if self.trials else math.nan

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.symbols if self.symbols else math.nan

    @property
    def der_ci(self) -> tuple[float, float]:
        if not self.trials:
            return math.nan, math.nan
        return wilson_interval(self.detection_errors, self.trials, self.z)

    @property
    def ser_ci(self) -> tuple[float, float]:
        if not self.symbols:
            return math.nan, math.nan
        return wilson_interval(self.symbol_errors, self.symbols, self.z)

    @property
    def mean_entropy_bits(self) -> float:
        return self.entropy_sum / self.trials if self.trials else math.nan


@dataclass(frozen=True)
class SweepResult:
    cells: tuple[CellResult, ...]
    master_seed: int
    snr_grid_db: tuple[float, ...] = field(default=())

    def cell(self, precoder: str, snr_db: float) -> CellResult:
        for c in self.cells:
            if c.precoder == precoder and c.snr_db == snr_db:
                return c
        raise KeyError((precoder, snr_db))

    def curve(self, precoder: str) -> list[CellResult]:
        return [c for c in self.cells if c.precoder == precoder]


def _run_chunk(args):
    scenario, precoder_id, snr_db, snr_index, master, start, stop, tie_tol = args
    code = PRECODER_CODE[precoder_id]
    channel_seed = None
    if scenario.fixed_channels:
        channel_seed = trial_seed(master, FIXED_CHANNEL_STREAM, 0, 0)
    out = []
    for t in range(start, stop):
        o = run_trial(
            scenario, precoder_id, snr_db, trial_seed(master, code, snr_index, t),
            channel_seed=channel_seed, tie_tol=tie_tol,
        )
        out.append((o.feasible, o.detection_error, o.symbol_errors, o.n_symbols, o.entropy_bits))
    return out


def run_sweep(
    scenario: Scenario,
    precoder_ids,
    snr_grid_db,
    trials: int,
    master_seed: int,
    workers: int = 1,
    z: float = 1.96,
    tie_tol: float = det.DEFAULT_TIE_TOL,
    chunk: int = 500,
    progress=None,
) -> SweepResult:
    """Estimate DER, SER and mean posterior entropy on a precoder x SNR grid.

    Aggregation uses integer counters and an exactly rounded entropy sum,
    so the result does not depend on ``workers`` or scheduling order.
    ``progress``, if given, is called with each finished ``(precoder, snr_db)``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    precoder_ids = tuple(precoder_ids)
    for p in precoder_ids:
        if p not in PRECODER_CODE:
            raise ValueError(f"unknown precoder {p!r}")
    grid = tuple(float(v) for v in snr_grid_db)

    tasks = []
    for p in precoder_ids:
        for i, snr in enumerate(grid):
            for start in range(0, trials, chunk):
                tasks.append((scenario, p, snr, i, master_seed, start, min(trials, start + chunk), tie_tol))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]

    per_cell: dict[tuple[str, int], list] = {}
    for task, rows in zip(tasks, results):
        per_cell.setdefault((task[1], task[3]), []).extend(rows)

    cells = []
    for p in precoder_ids:
        for i, snr in enumerate(grid):
            rows = per_cell[(p, i)]
            ok = [r for r in rows if r[0]]
            cells.append(
                CellResult(
                    snr_db=snr,
                    precoder=p,
                    trials=len(ok),
                    detection_errors=sum(int(r[1]) for r in ok),
                    symbol_errors=sum(r[2] for r in ok),
                    symbols=sum(r[3] for r in ok),
                    entropy_sum=math.fsum(r[4] for r in ok),
                    infeasible=len(rows) - len(ok),
                    seed=master_seed,
                    z=z,
                )
            )
            if progress is not None:
                progress(p, snr)
    return SweepResult(tuple(cells), master_seed, grid)
