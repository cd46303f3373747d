"""Cross-module property checks behind ``anonlink selftest``."""

from __future__ import annotations

import itertools
import time
from typing import Callable

import numpy as np

from . import numerics as nx
from .airlink import ChannelSet, demodulate, modulate, psk_constellation
from .precode import anonymity_residuals, ci_anonymous_precoder, im_anonymous_precoder

SUITES: dict[str, Callable[[np.random.Generator, float], None]] = {}


def _suite(name):
    def register(fn):
        SUITES[name] = fn
        return fn

    return register


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _check(cond: bool, what: str):
    if not cond:
        raise AssertionError(what)


@_suite("penrose")
def _penrose(rng, fault):
    for _ in range(100):
        m, n = rng.integers(1, 9, size=2)
        H = _crandn(rng, m, n)
        X = nx.pseudo_inverse(H) + fault
        scale = 1.0 + np.linalg.norm(H) * np.linalg.norm(X)
        tol = 1e-10 * scale
        _check(np.linalg.norm(H @ X @ H - H) <= tol * np.linalg.norm(H), "H X H = H")
        _check(np.linalg.norm(X @ H @ X - X) <= tol * np.linalg.norm(X), "X H X = X")
        _check(np.linalg.norm(H @ X - (H @ X).conj().T) <= tol, "H X Hermitian")
        _check(np.linalg.norm(X @ H - (X @ H).conj().T) <= tol, "X H Hermitian")


@_suite("projector")
def _projector(rng, fault):
    for _ in range(100):
        m = int(rng.integers(2, 9))
        n = int(rng.integers(1, m + 1))
        H = _crandn(rng, m, n)
        P = nx.projector(H) + fault
        _check(np.linalg.norm(P @ P - P) <= 1e-10, "idempotent")
        _check(np.linalg.norm(P - P.conj().T) <= 1e-10, "Hermitian")
        _check(np.linalg.norm(P @ H - H) <= 1e-10 * np.linalg.norm(H), "P H = H")


def _enumerate_qp(C, b):
    m, n = C.shape
    best = None
    for size in range(min(m, n) + 1):
        for S in itertools.combinations(range(m), size):
            S = list(S)
            z = np.linalg.lstsq(C[S], b[S], rcond=None)[0] if S else np.zeros(n)
            if S and np.linalg.norm(C[S] @ z - b[S]) > 1e-8 * (1 + np.linalg.norm(b[S])):
                continue
            if np.all(C @ z >= b - 1e-9 * (1 + np.abs(b))) and (best is None or z @ z < best @ best):
                best = z
    return best


@_suite("qp_oracle")
def _qp(rng, fault):
    for _ in range(200):
        m, n = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        C, b = rng.standard_normal((m, n)), rng.standard_normal(m)
        sol = nx.min_norm_qp(C, b)
        ref = _enumerate_qp(C, b)
        if ref is None:
            _check(not sol.optimal, "infeasible instance reported optimal")
            continue
        _check(sol.optimal, "feasible instance reported infeasible")
        _check(np.linalg.norm(sol.z + fault - ref) <= 1e-6 * (1 + np.linalg.norm(ref)), "matches enumeration")


@_suite("anonymity_residual")
def _anonymity(rng, fault):
    c = psk_constellation(4)
    K, nt, nr, d = 5, 10, 11, 4
    for _ in range(20):
        channels = ChannelSet.from_channels(_crandn(rng, K, nr, nt))
        k = int(rng.integers(K))
        aliases = tuple(j for j in range(K) if j != k)
        s = modulate(rng.integers(4, size=d), c)
        for res in (
            im_anonymous_precoder(channels, k, aliases, s, 1.0),
            ci_anonymous_precoder(channels, k, aliases, s, 1.0, c),
        ):
            y_norm = np.linalg.norm(channels[k] @ res.x)
            r = anonymity_residuals(channels, k, res.x) + fault
            _check(r.max() <= 1e-8 * y_norm, "residual equality across the anonymity set")
            _check(res.power <= 1.0 + 1e-9, "power budget")


@_suite("modulation_roundtrip")
def _roundtrip(rng, fault):
    for M in (2, 4, 8):
        c = psk_constellation(M)
        idx = np.arange(M)
        _check(np.array_equal(demodulate(modulate(idx, c) * np.exp(1j * fault * 1e3), c), idx), f"{M}-PSK")


def run_selftest(inject_fault: str | None = None, seed: int = 20201, out=print) -> bool:
    """Run every suite and print a pass/fail table. ``inject_fault`` names a
    suite whose checks get a deliberate perturbation (used to test the
    failure path)."""
    if inject_fault is not None and inject_fault not in SUITES:
        raise ValueError(f"unknown suite {inject_fault!r}; choose from {', '.join(SUITES)}")
    ok = True
    out(f"{'suite':<22}{'result':<8}{'seconds':>8}")
    for name, fn in SUITES.items():
        rng = np.random.default_rng([seed, len(name)])
        fault = 1e-3 if name == inject_fault else 0.0
        t0 = time.perf_counter()
        try:
            fn(rng, fault)
            status, detail = "PASS", ""
        except AssertionError as exc:
            status, detail, ok = "FAIL", f"  ({exc})", False
        out(f"{name:<22}{status:<8}{time.perf_counter() - t0:>8.2f}{detail}")
    return ok
