"""Pure-numpy fallback for the compiled kernel core.

Every function mirrors sparse24._core with the same floating-point
operation sequence per output element, so results are bit-identical
across backends (the gate kernel may differ from the compiled one by the
erf implementation's last ulp; everything else matches exactly).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

BACKEND_NAME = "python"

_RSQRT2 = 0.7071067811865476  # 1/sqrt(2)


def matmul_ref(a, b):
    """C = A @ B accumulating each cell strictly ascending in k."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError("inner dimensions differ")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    for p in range(a.shape[1]):
        out += a[:, p : p + 1] * b[p : p + 1, :]
    return out


def spmm_rowwise(values, pos, b):
    """Row-wise sparse times dense; pruned positions are never touched."""
    values = np.asarray(values)
    b = np.asarray(b)
    out = np.zeros((values.shape[0], b.shape[1]), dtype=values.dtype)
    for t in range(values.shape[1]):
        out += values[:, t : t + 1] * b[pos[:, t], :]
    return out


def spmm_colwise(a, values, pos):
    """Dense times column-wise sparse; output buffer is column-major."""
    a = np.asarray(a)
    values = np.asarray(values)
    out = np.zeros((a.shape[0], values.shape[1]), dtype=a.dtype, order="F")
    for t in range(values.shape[0]):
        out += a[:, pos[t, :]] * values[t : t + 1, :]
    return out


def pattern_scores(absblocks, positions):
    """Retained-L1 scores per (block, pattern); first argmax per block."""
    absblocks = np.asarray(absblocks)
    nb = absblocks.shape[0]
    npat = positions.shape[0]
    scores = np.empty((nb, npat), dtype=absblocks.dtype)
    for t in range(npat):
        s = absblocks[:, positions[t, 0]].copy()
        for p in range(1, 8):
            s = s + absblocks[:, positions[t, p]]
        scores[:, t] = s
    best = np.argmax(scores, axis=1)
    return scores, best


def prune_2of4_keep(groups):
    """Keep the two largest magnitudes per group, lowest index on ties."""
    groups = np.asarray(groups)
    # stable argsort of descending magnitude == sequential strict-> argmax
    order = np.argsort(-np.abs(groups), axis=1, kind="stable")
    keep = np.zeros(groups.shape, dtype=np.uint8)
    rows = np.arange(groups.shape[0])
    keep[rows, order[:, 0]] = 1
    keep[rows, order[:, 1]] = 1
    return keep


def greedy_masks(absblocks):
    """Greedy transposable mask per block; see the compiled kernel's doc."""
    absblocks = np.asarray(absblocks)
    nb = absblocks.shape[0]
    masks = np.zeros((nb, 16), dtype=np.uint8)
    orders = np.argsort(-absblocks, axis=1, kind="stable")
    for bi in range(nb):
        a = absblocks[bi]
        picked = np.zeros(16, dtype=np.uint8)
        rowc = [0, 0, 0, 0]
        colc = [0, 0, 0, 0]
        total = 0
        for idx in orders[bi]:
            r, c = idx >> 2, idx & 3
            if rowc[r] < 2 and colc[c] < 2:
                picked[idx] = 1
                rowc[r] += 1
                colc[c] += 1
                total += 1
        if total == 7:
            rdef = rowc.index(1)
            cdeficit = colc.index(1)
            best = None
            bestgain = None
            for r2 in range(4):
                if r2 == rdef:
                    continue
                for c2 in range(4):
                    if c2 == cdeficit or not picked[r2 * 4 + c2]:
                        continue
                    gain = a[rdef * 4 + c2] + a[r2 * 4 + cdeficit] - a[r2 * 4 + c2]
                    if bestgain is None or gain > bestgain:
                        bestgain = gain
                        best = (r2, c2)
            r2, c2 = best
            picked[r2 * 4 + c2] = 0
            picked[rdef * 4 + c2] = 1
            picked[r2 * 4 + cdeficit] = 1
            total = 8
        if total != 8:
            raise RuntimeError("greedy mask completion failed")
        masks[bi] = picked
    return masks


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * _RSQRT2))


def gate_gelu(z1, z2, row_order):
    """out = gelu(z1) * z2 into a column-major buffer.

    Values do not depend on traversal; the loop order only changes which
    axis is walked contiguously, mirroring the compiled kernel.
    """
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    if z1.shape != z2.shape:
        raise ValueError("gate operands differ in shape")
    out = np.empty(z1.shape, dtype=z1.dtype, order="F")
    if row_order:
        for i in range(z1.shape[0]):
            out[i, :] = _gelu(z1[i, :]) * z2[i, :]
    else:
        for j in range(z1.shape[1]):
            out[:, j] = _gelu(z1[:, j]) * z2[:, j]
    return out
