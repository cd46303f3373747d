"""Exit criteria for the artifact, one test per criterion.

Criteria 1-3 and 7 share one Monte Carlo sweep in the reference geometry
(K=5, N_t=10, N_r=11, d=4, QPSK, P=1 W, full anonymity, 10^4 trials per
point). Each test appends a PASS/FAIL line that the terminal summary prints.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from anonlink.airlink import ChannelSet, Scenario, ci_margin, modulate, psk_constellation
from anonlink.cli import format_csv, main
from anonlink.detect import declare, residuals
from anonlink.harness import run_sweep
from anonlink.numerics import min_norm_qp, orthonormal_range_basis
from anonlink.precode import (
    anonymity_residuals,
    anonymity_subspace,
    ci_anonymous_precoder,
    ci_min_power,
    im_anonymous_precoder,
)
from conftest import ACCEPTANCE_LINES
from oracles import crandn, grid_max_margin, qp_enumeration, random_qp

QPSK = psk_constellation(4)
SCENARIO = Scenario(5, 10, 11, 4, QPSK, power_watts=1.0)
GRID = tuple(2.5 * i for i in range(13))  # 0 .. 30 dB
TRIALS = 10_000
MASTER_SEED = 20201031
PRECODERS = ("svd", "zf", "mmse", "im_anon", "ci_anon")
RUNTIME_BUDGET_S = 300.0


def report(name, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok


@pytest.fixture(scope="module")
def sweep():
    cells, seconds = [], {}
    for p in PRECODERS:
        t0 = time.perf_counter()
        res = run_sweep(SCENARIO, [p], GRID, TRIALS, MASTER_SEED)
        seconds[p] = time.perf_counter() - t0
        cells.extend(res.cells)
    merged = type(res)(tuple(cells), MASTER_SEED, GRID)
    return merged, seconds


def overlap_le(a, b, attr):
    """``a <= b`` for the point estimates or their 95% intervals overlap."""
    va, vb = getattr(a, attr), getattr(b, attr)
    lo_a = getattr(a, attr + "_ci")[0]
    hi_b = getattr(b, attr + "_ci")[1]
    return va <= vb or lo_a <= hi_b


def snr_at_ser(curve, target=1e-2):
    """SNR where the SER curve first drops through ``target`` (log-linear)."""
    for a, b in zip(curve, curve[1:]):
        if a.ser >= target > b.ser:
            la = math.log10(a.ser)
            lb = math.log10(b.ser) if b.ser > 0 else la - 3
            return a.snr_db + (la - math.log10(target)) / (la - lb) * (b.snr_db - a.snr_db)
    if curve[0].ser < target:
        return -math.inf
    return math.inf


def test_c1_full_anonymity_der(sweep):
    res, seconds = sweep
    ok, parts = True, []
    for p in ("im_anon", "ci_anon"):
        high = [c for c in res.curve(p) if c.snr_db >= 15]
        ders = [c.der for c in high]
        in_band = all(0.77 <= d <= 0.83 for d in ders)
        fast = seconds[p] < RUNTIME_BUDGET_S
        ok &= in_band and fast
        parts.append(f"{p} DER in [{min(ders):.4f}, {max(ders):.4f}] over >=15 dB, sweep {seconds[p]:.0f}s")
    assert report("C1 full-anonymity DER in [0.77, 0.83], <5 min/sweep", ok, "; ".join(parts)), parts


def test_c2_baseline_detectability(sweep):
    res, _ = sweep
    svd = res.curve("svd")
    d10 = res.cell("svd", 10.0)
    d20 = res.cell("svd", 20.0)
    monotone = all(overlap_le(b, a, "der") for a, b in zip(svd, svd[1:]) if a.snr_db >= 0)
    ok = d10.der <= 0.05 and d20.der <= 0.01 and monotone
    detail = f"SVD DER {d10.der:.4f} @10 dB (<=0.05), {d20.der:.4f} @20 dB (<=0.01), monotone={monotone}"
    assert report("C2 SVD detectability", ok, detail), detail


def test_c3_ser_ordering_and_gain(sweep):
    res, _ = sweep
    ci, im, zf, svd = (res.curve(p) for p in ("ci_anon", "im_anon", "zf", "svd"))
    snr_ci, snr_zf = snr_at_ser(ci), snr_at_ser(zf)
    gain = snr_zf - snr_ci
    ci_le_im = all(overlap_le(a, b, "ser") for a, b in zip(ci, im))
    im_beats_svd = all(a.ser < b.ser for a, b in zip(im, svd) if a.snr_db >= 12)
    ok = gain >= 6.0 and ci_le_im and im_beats_svd
    detail = (
        f"SNR@SER=1e-2: CI {snr_ci:.2f} dB, ZF {snr_zf:.2f} dB, gain {gain:+.2f} dB (need >= 6); "
        f"CI<=IM everywhere={ci_le_im}; IM<SVD for >=12 dB={im_beats_svd}"
    )
    assert report("C3 SER ordering and CI gain", ok, detail), detail


def test_c4_noiseless_exactness():
    rng = np.random.default_rng(4)
    failures, tol = 0, 1e-9
    for _ in range(100):
        cs = ChannelSet.from_channels(crandn(rng, 5, 11, 10))
        k = int(rng.integers(5))
        aliases = tuple(j for j in range(5) if j != k)
        s = modulate(rng.integers(4, size=4), QPSK)
        im = im_anonymous_precoder(cs, k, aliases, s, 1.0)
        ci = ci_anonymous_precoder(cs, k, aliases, s, 1.0, QPSK, tol=tol)
        for res in (im, ci):
            y = cs[k] @ res.x
            if anonymity_residuals(cs, k, res.x).max() > 1e-8 * np.linalg.norm(y):
                failures += 1
        y_im = cs[k] @ im.x
        if np.max(np.abs(y_im[:4] - im.gain_or_margin * s)) > 1e-9 * im.gain_or_margin:
            failures += 1
        if abs(im.power - 1.0) > 1e-9 or ci.power > 1.0 + 1e-9:
            failures += 1
        u = (cs[k] @ ci.x)[:4] * np.conj(s)
        if np.any(ci_margin(u, QPSK.ci_half_angle) < ci.gain_or_margin - tol):
            failures += 1
    assert report("C4 noiseless exactness (100 instances)", failures == 0, f"{failures} failures"), failures


def test_c5_solver_oracles():
    rng = np.random.default_rng(5)
    qp_bad = 0
    for _ in range(200):
        C, b = random_qp(rng)
        sol = min_norm_qp(C, b)
        ref = qp_enumeration(C, b)
        if ref is None:
            qp_bad += sol.optimal
        elif not sol.optimal or np.linalg.norm(sol.z - ref) > 1e-6:
            qp_bad += 1
    bis_bad, tol = 0, 1e-3
    for _ in range(50):
        cs = ChannelSet.from_channels(crandn(rng, 3, 5, 4))
        k = int(rng.integers(3))
        aliases = tuple(j for j in range(3) if j != k)
        s = modulate(rng.integers(4, size=2), QPSK)
        res = ci_anonymous_precoder(cs, k, aliases, s, 1.0, QPSK, tol=tol, method="direct")
        G = cs[k][:2] @ anonymity_subspace(cs, k, aliases).basis
        grid = grid_max_margin(lambda t: ci_min_power(G, s, QPSK.ci_half_angle, t)[0], 1.0, tol, 10.0)
        bis_bad += abs(res.gain_or_margin - grid) > tol
    ok = qp_bad == 0 and bis_bad == 0
    detail = f"QP mismatches {qp_bad}/200, bisection-vs-grid mismatches {bis_bad}/50"
    assert report("C5 solver oracles", ok, detail), detail


def test_c6_detector_oracles():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        cs = ChannelSet.from_channels(crandn(rng, 5, 11, 10))
        y = crandn(rng, 11) * rng.uniform(0.1, 10)
        d = residuals(y, cs)
        for j in range(5):
            Q = orthonormal_range_basis(cs[j])
            ref = np.linalg.norm(y) ** 2 - np.linalg.norm(Q.conj().T @ y) ** 2
            worst = max(worst, abs(d[j] ** 2 - ref))
    draws = np.bincount([declare([0.5, 0.5, 0.9], 1e-9, rng) for _ in range(10**4)], minlength=3)
    p = stats.chisquare(draws[:2]).pvalue
    ok = worst <= 1e-10 and draws[2] == 0 and p > 0.01
    detail = f"max |d^2 - identity| = {worst:.2e}, tie counts {draws[:2].tolist()}, chi2 p = {p:.3f}"
    assert report("C6 detector oracles", ok, detail), detail


def test_c7_entropy(sweep):
    res, _ = sweep
    floor = 0.95 * math.log2(5)
    anon = [c.mean_entropy_bits for p in ("im_anon", "ci_anon") for c in res.curve(p) if c.snr_db >= 15]
    svd20 = res.cell("svd", 20.0).mean_entropy_bits
    ok = min(anon) >= floor and svd20 <= 0.2
    detail = (
        f"anonymous mean entropy >=15 dB in [{min(anon):.3f}, {max(anon):.3f}] bits (need >= {floor:.3f}); "
        f"SVD @20 dB {svd20:.3f} bits (need <= 0.2)"
    )
    assert report("C7 anonymity entropy", ok, detail), detail


def test_c8_reproducibility(tmp_path):
    cfg = tmp_path / "repro.cfg"
    cfg.write_text(
        "scenario.k = 5\nscenario.nt = 10\nscenario.nr = 11\nscenario.streams = 4\n"
        "sweep.snr_db = 0, 10, 20\nsweep.trials = 200\nseed = 77\n"
    )
    outs = []
    for name, workers in (("a.csv", "1"), ("b.csv", "1"), ("c.csv", "3")):
        out = tmp_path / name
        assert main(["run", "--config", str(cfg), "--out", str(out), "--workers", workers]) == 0
        outs.append(out.read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    assert report("C8 reproducibility", ok, f"3 runs (workers 1,1,3) byte-identical={ok}"), ok


def test_sweep_csv_artifact(sweep, tmp_path_factory):
    res, _ = sweep
    text = format_csv(res)
    path = tmp_path_factory.mktemp("acceptance") / "acceptance_sweep.csv"
    path.write_text(text)
    ACCEPTANCE_LINES.append(f"       sweep CSV: {path}")
    assert text.count("\n") == 1 + len(PRECODERS) * len(GRID)
