# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Accumulation order is part of each kernel's contract (per output cell the
contraction index is visited strictly ascending; pattern scores sum kept
positions in ascending flat order).  sparse24._core_py mirrors these
semantics exactly so the two backends are interchangeable bit for bit.
Compile with -ffp-contract=off: a fused multiply-add would round
differently from the numpy backend.
"""

from libc.math cimport erf, fabs
from libc.stdint cimport int32_t, int64_t

import numpy as np

BACKEND_NAME = "cython"

cdef double RSQRT2 = 0.7071067811865476  # 1/sqrt(2)

ctypedef fused real:
    float
    double


def matmul_ref(real[:, :] a, real[:, :] b):
    """C = A @ B accumulating each cell strictly ascending in k."""
    if a.shape[1] != b.shape[0]:
        raise ValueError("inner dimensions differ")
    out_np = np.zeros((a.shape[0], b.shape[1]),
                      dtype=np.float64 if real is double else np.float32)
    cdef real[:, :] out = out_np
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, p
    cdef real av
    for i in range(m):
        for p in range(k):
            av = a[i, p]
            for j in range(n):
                out[i, j] += av * b[p, j]
    return out_np


def spmm_rowwise(real[:, :] values, int64_t[:, :] pos, real[:, :] b):
    """C = A @ B where A is given as kept values plus absolute column
    positions (ascending within each row).  Pruned positions are skipped.
    """
    out_np = np.zeros((values.shape[0], b.shape[1]),
                      dtype=np.float64 if real is double else np.float32)
    cdef real[:, :] out = out_np
    cdef Py_ssize_t m = values.shape[0], s = values.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, t, kk
    cdef real av
    for i in range(m):
        for t in range(s):
            av = values[i, t]
            kk = pos[i, t]
            for j in range(n):
                out[i, j] += av * b[kk, j]
    return out_np


def spmm_colwise(real[:, :] a, real[:, :] values, int64_t[:, :] pos):
    """C = A @ B where B is given as kept values plus absolute row
    positions (ascending within each column).  Output is column-major.
    """
    out_np = np.zeros((a.shape[0], values.shape[1]),
                      dtype=np.float64 if real is double else np.float32,
                      order="F")
    cdef real[:, :] out = out_np
    cdef Py_ssize_t m = a.shape[0], s = values.shape[0], n = values.shape[1]
    cdef Py_ssize_t i, j, t, kk
    cdef real bv
    for j in range(n):
        for t in range(s):
            bv = values[t, j]
            kk = pos[t, j]
            for i in range(m):
                out[i, j] += a[i, kk] * bv
    return out_np


def pattern_scores(real[:, :] absblocks, int32_t[:, :] positions):
    """Retained-L1 score of every pattern on every 4x4 block.

    absblocks: (nblocks, 16) absolute values, blocks flattened row-major.
    positions: (npatterns, 8) kept flat positions, ascending.
    Returns (scores, best) where best is the first argmax per block.
    """
    cdef Py_ssize_t nb = absblocks.shape[0], np_ = positions.shape[0]
    scores_np = np.empty((nb, np_), dtype=np.float64 if real is double else np.float32)
    best_np = np.empty(nb, dtype=np.int64)
    cdef real[:, :] scores = scores_np
    cdef int64_t[:] best = best_np
    cdef Py_ssize_t bi, t, p
    cdef real s, bs
    cdef Py_ssize_t bidx
    for bi in range(nb):
        bs = 0
        bidx = 0
        for t in range(np_):
            s = 0
            for p in range(8):
                s += absblocks[bi, positions[t, p]]
            scores[bi, t] = s
            if t == 0 or s > bs:
                bs = s
                bidx = t
        best[bi] = bidx
    return scores_np, best_np


def prune_2of4_keep(real[:, :] groups):
    """Keep-mask of the two largest magnitudes per group of four.

    Ties break toward the lowest index.
    """
    cdef Py_ssize_t g_, i, i1, i2
    cdef Py_ssize_t ng = groups.shape[0]
    keep_np = np.zeros((ng, 4), dtype=np.uint8)
    cdef unsigned char[:, :] keep = keep_np
    cdef double a[4]
    for g_ in range(ng):
        for i in range(4):
            a[i] = fabs(<double> groups[g_, i])
        i1 = 0
        for i in range(1, 4):
            if a[i] > a[i1]:
                i1 = i
        i2 = -1
        for i in range(4):
            if i != i1 and (i2 == -1 or a[i] > a[i2]):
                i2 = i
        keep[g_, i1] = 1
        keep[g_, i2] = 1
    return keep_np


def greedy_masks(real[:, :] absblocks):
    """Greedy transposable mask per 4x4 block.

    Scans cells by descending magnitude (lowest flat index on ties) and
    picks any cell whose block row and column hold fewer than two picks.
    The scan can strand exactly one row/column pair at one pick each; a
    single swap (maximizing net retained magnitude, first-best on ties)
    then completes the block to a valid 2-per-row/2-per-column mask.
    """
    cdef Py_ssize_t nb = absblocks.shape[0]
    masks_np = np.zeros((nb, 16), dtype=np.uint8)
    cdef unsigned char[:, :] masks = masks_np
    cdef Py_ssize_t bi, pos, i, t, idx, r, c, best, total
    cdef Py_ssize_t rdef, cdeficit, r2, c2, br, bc
    cdef int order[16]
    cdef unsigned char used[16]
    cdef unsigned char picked[16]
    cdef int rowc[4]
    cdef int colc[4]
    cdef double a[16]
    cdef double gain, bestgain
    cdef bint first
    for bi in range(nb):
        for i in range(16):
            a[i] = <double> absblocks[bi, i]
            used[i] = 0
            picked[i] = 0
        for pos in range(16):
            best = -1
            for i in range(16):
                if not used[i] and (best == -1 or a[i] > a[best]):
                    best = i
            used[best] = 1
            order[pos] = <int> best
        for i in range(4):
            rowc[i] = 0
            colc[i] = 0
        total = 0
        for t in range(16):
            idx = order[t]
            r = idx >> 2
            c = idx & 3
            if rowc[r] < 2 and colc[c] < 2:
                picked[idx] = 1
                rowc[r] += 1
                colc[c] += 1
                total += 1
        if total == 7:
            rdef = -1
            cdeficit = -1
            for i in range(4):
                if rowc[i] < 2:
                    rdef = i
                if colc[i] < 2:
                    cdeficit = i
            bestgain = 0
            first = True
            br = -1
            bc = -1
            for r2 in range(4):
                if r2 == rdef:
                    continue
                for c2 in range(4):
                    if c2 == cdeficit:
                        continue
                    if picked[r2 * 4 + c2]:
                        gain = a[rdef * 4 + c2] + a[r2 * 4 + cdeficit] - a[r2 * 4 + c2]
                        if first or gain > bestgain:
                            bestgain = gain
                            br = r2
                            bc = c2
                            first = False
            picked[br * 4 + bc] = 0
            picked[rdef * 4 + bc] = 1
            picked[br * 4 + cdeficit] = 1
            total = 8
        if total != 8:
            raise RuntimeError("greedy mask completion failed")
        for i in range(16):
            masks[bi, i] = picked[i]
    return masks_np


def gate_gelu(real[:, :] z1, real[:, :] z2, bint row_order):
    """out = gelu(z1) * z2, traversed row-by-row or column-by-column.

    The traversal affects memory access order only; outputs are bitwise
    identical.  The result buffer is column-major, matching the layout the
    fully-sparse forward pass produces for activations.
    """
    if z1.shape[0] != z2.shape[0] or z1.shape[1] != z2.shape[1]:
        raise ValueError("gate operands differ in shape")
    out_np = np.empty((z1.shape[0], z1.shape[1]),
                      dtype=np.float64 if real is double else np.float32,
                      order="F")
    cdef real[:, :] out = out_np
    cdef Py_ssize_t m = z1.shape[0], n = z1.shape[1]
    cdef Py_ssize_t i, j
    cdef double x, g
    if row_order:
        for i in range(m):
            for j in range(n):
                x = <double> z1[i, j]
                g = 0.5 * x * (1.0 + erf(x * RSQRT2))
                out[i, j] = <real> (g * <double> z2[i, j])
    else:
        for j in range(n):
            for i in range(m):
                x = <double> z1[i, j]
                g = 0.5 * x * (1.0 + erf(x * RSQRT2))
                out[i, j] = <real> (g * <double> z2[i, j])
    return out_np
