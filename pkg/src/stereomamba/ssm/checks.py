"""Executable equivalence suite and the scan-vs-matrix timing report."""

import logging
import time

import numpy as np

from .core import (SsmSequence, attention_from_sequence, masked_linear_attention,
                   materialize_m, ssm_scan)

log = logging.getLogger(__name__)


def duality_check(n_seeds=100, t_max=64, n_max=16, seed=0):
    """Scan vs ``M x`` on general decays, and scan vs masked attention with ``A == 1``.

    Returns a dict with the worst absolute deviations of both comparisons,
    the elapsed time, and pass flags at 1e-10 / 1e-12.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_matrix = worst_attention = 0.0
    for _ in range(n_seeds):
        T = int(rng.integers(1, t_max + 1))
        N = int(rng.integers(1, n_max + 1))
        seq = SsmSequence.random(rng, T, N)
        y = ssm_scan(seq).data
        M = materialize_m(seq).M
        worst_matrix = max(worst_matrix, float(np.abs(y - M @ seq.x).max()))

        ones = SsmSequence.random(rng, T, N, ones=True)
        y1 = ssm_scan(ones).data
        ya = masked_linear_attention(attention_from_sequence(ones))
        worst_attention = max(worst_attention, float(np.abs(y1 - ya).max()))
    elapsed = time.perf_counter() - start
    return {
        "seeds": n_seeds,
        "max_abs_scan_vs_matrix": worst_matrix,
        "max_abs_scan_vs_attention": worst_attention,
        "seconds": elapsed,
        "scan_matrix_ok": worst_matrix < 1e-10,
        "scan_attention_ok": worst_attention < 1e-12,
        "ok": worst_matrix < 1e-10 and worst_attention < 1e-12,
    }


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def scan_bench(t_list=(1, 64, 128, 256, 512, 1024, 2048, 4096), n=8, seed=0, repeat=3, atol=1e-10):
    """Time the linear scan against materialize + matvec for each length.

    Each row holds both timings, the growth ratio against the previous
    length and the max deviation between the two outputs; a deviation above
    ``atol`` raises.
    """
    rng = np.random.default_rng(seed)
    rows = []
    prev = None
    for T in t_list:
        seq = SsmSequence.random(rng, T, n)
        ssm_scan(seq)  # warm the kernel
        t_scan, y = _time(lambda: ssm_scan(seq).data, repeat)
        t_mat, ym = _time(lambda: materialize_m(seq, check=False).M @ seq.x, repeat)
        diff = float(np.abs(y - ym).max())
        scale = max(1.0, float(np.abs(ym).max()))
        if diff > atol * scale:
            raise AssertionError(f"T={T}: scan and materialized outputs differ by {diff:.3e}")
        row = {"T": T, "N": n, "scan_s": t_scan, "matrix_s": t_mat, "max_abs_diff": diff,
               "scan_ratio": None, "matrix_ratio": None}
        if prev is not None and T == 2 * prev["T"]:
            row["scan_ratio"] = t_scan / prev["scan_s"]
            row["matrix_ratio"] = t_mat / prev["matrix_s"]
        log.info("T=%d scan=%.3es matrix=%.3es diff=%.1e", T, t_scan, t_mat, diff)
        rows.append(row)
        prev = row
    return rows


def format_bench(rows):
    lines = [f"{'T':>6} {'scan (s)':>12} {'matrix (s)':>12} {'scan x':>8} {'matrix x':>9} {'max|diff|':>10}"]
    for r in rows:
        sr = f"{r['scan_ratio']:.2f}" if r["scan_ratio"] else "-"
        mr = f"{r['matrix_ratio']:.2f}" if r["matrix_ratio"] else "-"
        lines.append(f"{r['T']:>6} {r['scan_s']:>12.3e} {r['matrix_s']:>12.3e} {sr:>8} {mr:>9} "
                     f"{r['max_abs_diff']:>10.1e}")
    return "\n".join(lines)
