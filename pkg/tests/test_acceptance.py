"""Acceptance criteria, one test each.

Every check prints a single ``AC<n> PASS|FAIL ...`` line. The lines are also
collected and repeated in the pytest terminal summary, and running this file
directly (``python3 tests/test_acceptance.py``) prints them without pytest.
"""

import math
import time

import numpy as np
import pytest

from fmtlab import theory
from fmtlab.empirics import GaussianCorpus, crest_factor_stats, stability_experiment
from fmtlab.formats import (
    BUILTIN_NAMES, FormatSpec, FpLayout, IntLayout, ScaleMode, build_codebook, lookup_format,
)
from fmtlab.hwcost import format_cost, mixed_format_cost
from fmtlab.quant import BlockScale, RotationSpec, hadamard_matrix, quantize_block, quantize_tensor

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"AC{n} {'PASS' if ok else 'FAIL'} {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# --- shared Monte Carlo corpus for criteria 2 and 3 ---------------------------

CORPUS = GaussianCorpus(n_tensors=512, shape=(64, 4096), seed=0)


@pytest.fixture(scope="module")
def corpus_runs():
    """One pass over the corpus; per-format time includes generating the tensor."""
    fp8, int8, kappa, rho = [], [], [], []
    t_gen = t_fp = t_int = 0.0
    for i in range(CORPUS.n_tensors):
        t0 = time.perf_counter()
        x = CORPUS.tensor(i)
        t1 = time.perf_counter()
        rf = quantize_tensor(x, "MXFP8")
        t2 = time.perf_counter()
        ri = quantize_tensor(x, "MXINT8")
        t3 = time.perf_counter()
        t_gen += t1 - t0
        t_fp += t2 - t1
        t_int += t3 - t2
        fp8.append(rf.qsnr_db)
        int8.append(ri.qsnr_db)
        kappa.append(ri.mean_kappa)
        rho.append(ri.mean_rho)
    return {
        "fp8": np.array(fp8), "int8": np.array(int8),
        "kappa": np.array(kappa), "rho": np.array(rho),
        "time_fp8": t_gen + t_fp, "time_int8": t_gen + t_int,
    }


# --- 1 ------------------------------------------------------------------------

CROSSOVER_TARGETS = {
    ("MXINT8", "MXFP8"): (7.55, 0.30),
    ("MXINT6", "MXFP6"): (1.96, 0.15),
    ("MXINT4", "MXFP4"): (2.04, 0.15),
    ("NVINT4", "NVFP4"): (2.39, 0.20),
}


def test_ac1_crossovers():
    t0 = time.perf_counter()
    found = {pair: theory.format_crossover(*pair, rho=1.5).kappa_star for pair in CROSSOVER_TARGETS}
    elapsed = time.perf_counter() - t0
    ok = elapsed < 1.0
    parts = []
    for pair, (want, tol) in CROSSOVER_TARGETS.items():
        got = found[pair]
        ok &= got is not None and abs(got - want) <= tol
        parts.append(f"{pair[0]}/{pair[1]}={got:.3f}(target {want}+-{tol})")
    report(1, ok, "crossovers " + " ".join(parts) + f" in {elapsed:.3f}s")


# --- 2 ------------------------------------------------------------------------

@pytest.mark.slow
def test_ac2_fp_ceiling(corpus_runs):
    e4m3 = lookup_format("MXFP8").element
    e2m3 = lookup_format("MXFP6").element
    ceilings = [theory.qsnr_fp_ue8m0(el, 1.0, 1.0) for el in (e4m3, e2m3)]
    mean_fp8 = float(corpus_runs["fp8"].mean())
    elapsed = corpus_runs["time_fp8"]
    ok = all(abs(c - 31.86) <= 0.2 for c in ceilings) and 31.0 <= mean_fp8 <= 32.0 and elapsed < 60
    report(2, ok, f"ceiling E4M3={ceilings[0]:.3f} E2M3={ceilings[1]:.3f} dB (31.86+-0.2); "
                  f"MC MXFP8 mean {mean_fp8:.3f} dB over {CORPUS.n_tensors} tensors "
                  f"(range {corpus_runs['fp8'].min():.2f}..{corpus_runs['fp8'].max():.2f}) in {elapsed:.1f}s")


# --- 3 ------------------------------------------------------------------------

@pytest.mark.slow
def test_ac3_int8_theory_oracle(corpus_runs):
    pred = theory.qsnr_int_ue8m0(8, corpus_runs["rho"], corpus_runs["kappa"])
    dev = np.abs(corpus_runs["int8"] - pred)
    frac = float(np.mean(dev <= 1.5))
    elapsed = corpus_runs["time_int8"]
    ok = frac >= 0.95 and elapsed < 60
    report(3, ok, f"MXINT8 within 1.5 dB of theory for {frac:.1%} of tensors "
                  f"(max dev {dev.max():.3f} dB) in {elapsed:.1f}s")


# --- 4 ------------------------------------------------------------------------

def test_ac4_stability():
    t0 = time.perf_counter()
    r = {k: stability_experiment(4096, k, seed=0).ratio for k in ("bf16", "fp16", "fp32")}
    elapsed = time.perf_counter() - t0
    ok = (abs(r["bf16"] * 100 - 16.82) <= 1.0 and abs(r["fp16"] * 100 - 0.02) <= 0.02
          and r["fp32"] == 0 and elapsed < 30)
    report(4, ok, f"n=4096 bf16 {r['bf16']:.4%} fp16 {r['fp16']:.4%} fp32 {r['fp32']:.4%} "
                  f"in {elapsed:.1f}s")


# --- 5 ------------------------------------------------------------------------

def test_ac5_symmetric_clipping():
    # AbsMax scale computed and applied in BF16; power-of-two scales would hide the issue
    spec = FormatSpec("INT8-exact", IntLayout(8), 32, ScaleMode.EXACT)
    x = np.random.default_rng(0).standard_normal((10**7 // 32, 32))
    counts = {}
    for sym in (True, False):
        r = quantize_tensor(x, spec, scale_precision="bf16", symmetric=sym, keep_codes=True)
        counts[sym] = int(np.count_nonzero(r.codes == -128))
    ok = counts[True] == 0 and counts[False] > 0
    report(5, ok, f"10^7 values, BF16 scale arithmetic: -128 codes symmetric={counts[True]} "
                  f"asymmetric={counts[False]}")


# --- 6 ------------------------------------------------------------------------

def _codebook_for(spec):
    el = spec.element
    if isinstance(el, IntLayout):
        vals = np.arange(el.q_min, el.q_max + 1, dtype=np.float64)
        return vals, (vals.astype(np.int64) % 2 == 0)
    cb = build_codebook(el)
    return cb.values, cb.even


def _brute_force(y, vals, even):
    d = np.abs(y[:, None] - vals[None, :])
    best = d.min(axis=1, keepdims=True)
    cand = d == best
    # among equidistant candidates prefer the even one
    pick_even = cand & even[None, :]
    use = np.where(pick_even.any(axis=1, keepdims=True), pick_even, cand)
    return vals[np.argmax(use, axis=1)], cand.sum(axis=1)


def test_ac6_quantizer_brute_force():
    rng = np.random.default_rng(6)
    lines, ok = [], True
    for name in BUILTIN_NAMES:
        spec = lookup_format(name)
        vals, even = _codebook_for(spec)
        qmax = vals.max()
        y = rng.uniform(-1.25 * qmax, 1.25 * qmax, 10**5)
        # plant exact midpoints so ties are exercised
        mids = (vals[:-1] + vals[1:]) / 2
        y[: 2 * len(mids)] = np.tile(mids, 2)
        want, n_cand = _brute_force(y, vals, even)
        got = quantize_block(y, spec, BlockScale(1.0, ScaleMode.EXACT)).dequantized
        again = quantize_block(got, spec, BlockScale(1.0, ScaleMode.EXACT)).dequantized
        mism = int(np.count_nonzero(got != want))
        idem = int(np.count_nonzero(again != got))
        ok &= mism == 0 and idem == 0
        lines.append(f"{name}:mismatch={mism},ties={int(np.sum(n_cand > 1))},non_idempotent={idem}")
    report(6, ok, "10^5 values per format; " + " ".join(lines))


# --- 7 ------------------------------------------------------------------------

def test_ac7_e4m3_gain():
    worst = 0.0
    for g in (2, 16, 32):
        for b in (4, 6, 8):
            for kappa in (1.0, 1.3, 2.0, 3.7):
                gain = theory.qsnr_int_e4m3(b, kappa, g) - (4.78 + 6.02 * b - 20 * math.log10(kappa))
                worst = max(worst, abs(gain - 10 * math.log10(g / (g - 1))))
    # rho = 1: exact AbsMax scale, so the block max must map onto +-q_max
    rng = np.random.default_rng(7)
    x = rng.standard_normal((100_000, 16))
    rows = np.arange(len(x))
    fracs = {}
    for el in (IntLayout(4), FpLayout(2, 1, 1)):
        spec = FormatSpec("rho1", el, 16, ScaleMode.EXACT)
        r = quantize_tensor(x, spec)
        i = np.abs(x).argmax(axis=1)
        a, d = x[rows, i], r.dequantized[rows, i]
        fracs[el.name] = float(np.mean(np.abs(d - a) <= np.spacing(np.abs(a))))
    ok = worst <= 1e-9 and all(f >= 0.999 for f in fracs.values())
    detail = " ".join(f"{k}={v:.4%}" for k, v in fracs.items())
    report(7, ok, f"max |gain - 10log10(g/(g-1))| = {worst:.2e} for g in 2,16,32; "
                  f"block max reproduced to 1 ulp in {detail} of 10^5 blocks")


# --- 8 ------------------------------------------------------------------------

def test_ac8_hardware_ordering():
    t0 = time.perf_counter()
    pairs = {
        "MXINT8<MXFP8": (format_cost("MXINT8"), format_cost("MXFP8")),
        "NVINT4<NVFP4": (format_cost("NVINT4"), format_cost("NVFP4")),
        "INT_REUSE_2<FP_REUSE": (mixed_format_cost("int_reuse_2"), mixed_format_cost("fp_reuse")),
    }
    elapsed = time.perf_counter() - t0
    ok = elapsed < 1.0
    parts = []
    for label, (a, b) in pairs.items():
        ok &= a.area_total < b.area_total and a.energy_total < b.energy_total
        parts.append(f"{label}: area {a.area_total / b.area_total:.3f}x energy "
                     f"{a.energy_total / b.energy_total:.3f}x")
    report(8, ok, "; ".join(parts) + f" in {elapsed:.3f}s")


# --- 9 ------------------------------------------------------------------------

def test_ac9_rotation():
    err = max(float(np.max(np.abs(hadamard_matrix(RotationSpec(d, seed=s)).T
                                  @ hadamard_matrix(RotationSpec(d, seed=s)) - np.eye(d))))
              for d in (2, 16, 32, 128) for s in (0, 1))
    corpus = list(GaussianCorpus(n_tensors=16, shape=(64, 512), seed=9, outlier_magnitude=20.0))
    before = crest_factor_stats(corpus, 32)
    after = crest_factor_stats(corpus, 32, rotation=RotationSpec(32, seed=0))
    ok = err <= 1e-6 and after.mean < before.mean
    report(9, ok, f"max|R^T R - I| = {err:.1e}; outlier corpus mean kappa {before.mean:.3f} -> "
                  f"{after.mean:.3f} (Q3 {before.q3:.3f} -> {after.q3:.3f})")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
