"""Numba kernels for two-bit updates of length-2^n vectors.

Each index group is the set of four indices that differ only in bits ``p``
and ``q``; groups partition the index space, so the parallel loop writes
disjoint components and the result does not depend on scheduling.
"""

import numba
import numpy as np
from numba import njit, prange


@njit(cache=True, inline="always")
def _group_base(g, lo, hi):
    # insert zero bits at positions lo < hi
    mask_lo = (1 << lo) - 1
    i = ((g >> lo) << (lo + 1)) | (g & mask_lo)
    mask_hi = (1 << hi) - 1
    return ((i >> hi) << (hi + 1)) | (i & mask_hi)


@njit(cache=True, parallel=True)
def apply_pair_inplace(data, m, p, q):
    """Apply the 4x4 matrix ``m`` to bits ``(p, q)`` of ``data`` in place.

    Local index is ``s_p + 2 * s_q``; ``p`` and ``q`` are 0-based bits.
    """
    lo = min(p, q)
    hi = max(p, q)
    bp = 1 << p
    bq = 1 << q
    ngroups = data.shape[0] >> 2
    m00, m01, m02, m03 = m[0, 0], m[0, 1], m[0, 2], m[0, 3]
    m10, m11, m12, m13 = m[1, 0], m[1, 1], m[1, 2], m[1, 3]
    m20, m21, m22, m23 = m[2, 0], m[2, 1], m[2, 2], m[2, 3]
    m30, m31, m32, m33 = m[3, 0], m[3, 1], m[3, 2], m[3, 3]
    for g in prange(ngroups):
        i0 = _group_base(g, lo, hi)
        i1 = i0 | bp
        i2 = i0 | bq
        i3 = i0 | bp | bq
        a0 = data[i0]
        a1 = data[i1]
        a2 = data[i2]
        a3 = data[i3]
        data[i0] = m00 * a0 + m01 * a1 + m02 * a2 + m03 * a3
        data[i1] = m10 * a0 + m11 * a1 + m12 * a2 + m13 * a3
        data[i2] = m20 * a0 + m21 * a1 + m22 * a2 + m23 * a3
        data[i3] = m30 * a0 + m31 * a1 + m32 * a2 + m33 * a3


@njit(cache=True, parallel=True)
def axpy_inplace(acc, x, alpha):
    for k in prange(acc.shape[0]):
        acc[k] += alpha * x[k]


@njit(cache=True, parallel=True)
def apply_ptm_inplace(coeffs, ptm, p, q):
    """Apply a 16x16 Pauli transfer matrix to base-4 digits ``p, q`` of a
    length-4^n coefficient vector. Local index is ``l_p + 4 * l_q``."""
    lo = min(p, q)
    hi = max(p, q)
    sp = 4 ** p
    sq = 4 ** q
    slo = 4 ** lo
    shi = 4 ** hi
    ngroups = coeffs.shape[0] // 16
    for g in prange(ngroups):
        # insert zero base-4 digits at positions lo < hi
        a = g % slo
        b = g // slo
        i = b * (slo * 4) + a
        a = i % shi
        b = i // shi
        base = b * (shi * 4) + a
        buf = np.empty(16)
        for lq in range(4):
            for lp in range(4):
                buf[lp + 4 * lq] = coeffs[base + lp * sp + lq * sq]
        for lq in range(4):
            for lp in range(4):
                r = lp + 4 * lq
                acc = 0.0
                for c in range(16):
                    acc += ptm[r, c] * buf[c]
                coeffs[base + lp * sp + lq * sq] = acc


def set_threads(n):
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


_CHUNK = 1 << 14


@njit(cache=True, parallel=True)
def popcount_weighted_sum(x, weights):
    """``sum_s weights[popcount(s)] * x[s]`` with a schedule-independent order."""
    size = x.shape[0]
    nchunks = (size + _CHUNK - 1) // _CHUNK
    partial = np.zeros(nchunks)
    for c in prange(nchunks):
        lo = c * _CHUNK
        hi = min(lo + _CHUNK, size)
        acc = 0.0
        for s in range(lo, hi):
            v = s
            k = 0
            while v:
                v &= v - 1
                k += 1
            acc += weights[k] * x[s]
        partial[c] = acc
    total = 0.0
    for c in range(nchunks):
        total += partial[c]
    return total


@njit(cache=True, parallel=True)
def shift_nonzero_inplace(x, beta):
    x[0] = 0.0
    for s in prange(1, x.shape[0]):
        x[s] -= beta
