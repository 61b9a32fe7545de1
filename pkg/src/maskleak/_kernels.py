"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The numba path compiles the *_loop implementations with @njit and is used
by default when numba imports cleanly. Set MASKLEAK_NUMBA=0 to force the
vectorized numpy implementations instead. Both paths are always importable
(suffixed _numpy, and _numba when available) so benchmarks and parity tests
can compare them directly; results agree to within a few ulp (libm vs numpy
transcendentals), and each path is bit-deterministic on its own.
"""

from __future__ import annotations

import math
import os

import numpy as np

# Relative slack at tick boundaries so a press that lands exactly on a
# refresh/frame tick (up to fp rounding) maps to that tick, not the next.
_TICK_TOL = 1e-9


def numba_requested() -> bool:
    return os.environ.get("MASKLEAK_NUMBA", "1").strip().lower() not in (
        "0",
        "false",
        "off",
        "no",
    )


# ---------------------------------------------------------------------------
# two-stage tick quantization (display refresh latch, then camera frame)
# ---------------------------------------------------------------------------

def quantize_times_numpy(times, r_phase, r_period, f_phase, f_period):
    t = np.asarray(times, dtype=np.float64)
    if r_period > 0.0:
        k = np.ceil((t - r_phase) / r_period - _TICK_TOL)
        t = np.maximum(r_phase + k * r_period, t)
    if f_period > 0.0:
        k = np.ceil((t - f_phase) / f_period - _TICK_TOL)
        t = np.maximum(f_phase + k * f_period, t)
    return t


def _quantize_times_loop(times, r_phase, r_period, f_phase, f_period):
    out = np.empty_like(times)
    for i in range(times.shape[0]):
        t = times[i]
        if r_period > 0.0:
            k = math.ceil((t - r_phase) / r_period - _TICK_TOL)
            v = r_phase + k * r_period
            if v < t:
                v = t
            t = v
        if f_period > 0.0:
            k = math.ceil((t - f_phase) / f_period - _TICK_TOL)
            v = f_phase + k * f_period
            if v < t:
                v = t
            t = v
        out[i] = t
    return out


# ---------------------------------------------------------------------------
# gamma log-density matrix: rows = query latencies, cols = labels
# ---------------------------------------------------------------------------

def gamma_logpdf_numpy(x, shapes, scales):
    x = np.asarray(x, dtype=np.float64)
    shapes = np.asarray(shapes, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    lgam = np.array([math.lgamma(k) for k in shapes])
    return (
        np.log(x)[:, None] * (shapes - 1.0)
        - x[:, None] / scales
        - lgam
        - shapes * np.log(scales)
    )


def _gamma_logpdf_loop(x, shapes, scales):
    out = np.empty((x.shape[0], shapes.shape[0]))
    for j in range(shapes.shape[0]):
        k = shapes[j]
        th = scales[j]
        const = -math.lgamma(k) - k * math.log(th)
        for i in range(x.shape[0]):
            out[i, j] = math.log(x[i]) * (k - 1.0) - x[i] / th + const
    return out


# ---------------------------------------------------------------------------
# penalty accumulation: sum of per-position digraph ranks over a dictionary
# ---------------------------------------------------------------------------

def penalty_totals_numpy(digraph_idx, position_ranks, oov_ranks):
    n_pw, n_pos = digraph_idx.shape
    total = np.zeros(n_pw, dtype=np.int64)
    for q in range(n_pos):
        col = digraph_idx[:, q]
        ranked = position_ranks[q, np.maximum(col, 0)]
        total += np.where(col >= 0, ranked, oov_ranks[q])
    return total


def _penalty_totals_loop(digraph_idx, position_ranks, oov_ranks):
    n_pw, n_pos = digraph_idx.shape
    total = np.zeros(n_pw, dtype=np.int64)
    for p in range(n_pw):
        acc = 0
        for q in range(n_pos):
            j = digraph_idx[p, q]
            if j >= 0:
                acc += position_ranks[q, j]
            else:
                acc += oov_ranks[q]
        total[p] = acc
    return total


NUMBA_ENABLED = False
quantize_times = quantize_times_numpy
gamma_logpdf = gamma_logpdf_numpy
penalty_totals = penalty_totals_numpy

if numba_requested():
    try:
        from numba import njit
    except ImportError:
        pass
    else:
        NUMBA_ENABLED = True
        quantize_times_numba = njit(cache=True)(_quantize_times_loop)
        gamma_logpdf_numba = njit(cache=True)(_gamma_logpdf_loop)
        penalty_totals_numba = njit(cache=True)(_penalty_totals_loop)
        quantize_times = quantize_times_numba
        gamma_logpdf = gamma_logpdf_numba
        penalty_totals = penalty_totals_numba
