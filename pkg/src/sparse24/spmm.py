"""Packed 2:4 storage, simulated sparse matmul, and the operand-layout
compatibility planner.

The simulated multiplies are correctness tools, not performance claims:
their contract is bit-for-bit equality with `dense_matmul` on the
decompressed operand, which both achieve by accumulating each output cell
strictly ascending in the contraction index.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .backend import kernels
from .matrix import Direction, FormatError, Layout, Matrix, ShapeError, as_array
from .sparsity import Mask24, SparseEstimate, from_groups, to_groups

__all__ = [
    "Compressed24",
    "compress",
    "decompress",
    "transpose_view",
    "spmm",
    "spmm_right",
    "dense_matmul",
    "Operand",
    "LayoutQuery",
    "PlanResult",
    "layout_plan",
    "dense_matmul_flops",
    "sparse_matmul_flops",
]


@dataclass
class Compressed24:
    """Packed 2:4 sparse storage: kept values plus one metadata nibble per
    group of four (low two bits = first kept index, high two bits = second;
    indices are distinct and ascending).

    Row-wise groups run along rows and are stored row-major; column-wise
    groups run down columns and are stored column-major.
    """

    rows: int
    cols: int
    direction: Direction
    values: np.ndarray  # float64, length rows*cols/2
    meta: np.ndarray  # uint8, length rows*cols/4, one nibble per group

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.meta = np.asarray(self.meta, dtype=np.uint8).reshape(-1)
        n = self.rows * self.cols
        if self.values.size != n // 2 or self.meta.size != n // 4:
            raise FormatError("compressed buffer sizes do not match the dense shape")

    def kept_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-group kept indices (i0, i1), each in 0..3, i0 < i1."""
        i0 = (self.meta & 3).astype(np.int64)
        i1 = ((self.meta >> 2) & 3).astype(np.int64)
        if not (i0 < i1).all():
            raise FormatError("metadata indices must be distinct and ascending")
        return i0, i1

    def _slots(self) -> tuple[np.ndarray, np.ndarray]:
        """(values2d, pos2d) with slots ascending along the grouped axis.

        Row-wise: (rows, cols/2) with absolute column positions.
        Column-wise: (rows/2, cols) with absolute row positions.
        """
        i0, i1 = self.kept_indices()
        if self.direction is Direction.ROW_WISE:
            lead, grouped = self.rows, self.cols
        else:
            lead, grouped = self.cols, self.rows
        ng = grouped // 4
        offs = 4 * np.arange(ng, dtype=np.int64)
        pos = np.empty((lead, ng, 2), dtype=np.int64)
        pos[:, :, 0] = i0.reshape(lead, ng) + offs
        pos[:, :, 1] = i1.reshape(lead, ng) + offs
        pos2d = pos.reshape(lead, grouped // 2)
        values2d = self.values.reshape(lead, grouped // 2)
        if self.direction is Direction.COL_WISE:
            return values2d.T, pos2d.T
        return values2d, pos2d


def compress(s: SparseEstimate) -> Compressed24:
    """Pack a pruned matrix; the mask must be a valid 2:4 mask."""
    s.mask.validate()
    direction = s.mask.direction
    bits_g = to_groups(s.mask.bits, direction)
    vals_g = to_groups(s.values, direction)
    i0 = np.argmax(bits_g, axis=1).astype(np.uint8)
    i1 = (3 - np.argmax(bits_g[:, ::-1], axis=1)).astype(np.uint8)
    rows = np.arange(len(bits_g))
    values = np.empty((len(bits_g), 2), dtype=np.float64)
    values[:, 0] = vals_g[rows, i0]
    values[:, 1] = vals_g[rows, i1]
    meta = (i0 | (i1 << 2)).astype(np.uint8)
    r, c = s.values.shape
    return Compressed24(r, c, direction, values.reshape(-1), meta)


def compress_masked(w, mask: Mask24) -> Compressed24:
    """compress(apply_mask(w, mask)) without materializing the estimate."""
    arr = as_array(w, np.float64)
    if arr.shape != mask.bits.shape:
        raise ShapeError("weight and mask shapes differ")
    return compress(SparseEstimate(arr * mask.bits, mask))


def decompress(c: Compressed24) -> Matrix:
    """Dense matrix with kept values at their metadata positions."""
    i0, i1 = c.kept_indices()
    vals = c.values.reshape(-1, 2)
    groups = np.zeros((len(i0), 4), dtype=np.float64)
    rows = np.arange(len(i0))
    groups[rows, i0] = vals[:, 0]
    groups[rows, i1] = vals[:, 1]
    arr = from_groups(groups, (c.rows, c.cols), c.direction)
    if c.direction is Direction.ROW_WISE:
        return Matrix.row_major(arr)
    return Matrix.col_major(arr)


def mask_of(c: Compressed24) -> Mask24:
    """Reconstruct the binary mask encoded by the metadata."""
    i0, i1 = c.kept_indices()
    bits = np.zeros((len(i0), 4), dtype=np.uint8)
    rows = np.arange(len(i0))
    bits[rows, i0] = 1
    bits[rows, i1] = 1
    return Mask24(from_groups(bits, (c.rows, c.cols), c.direction), c.direction)


def transpose_view(c: Compressed24) -> Compressed24:
    """Transpose without copying: row-wise (m, k) becomes column-wise
    (k, m) over the same buffers."""
    direction = (
        Direction.COL_WISE if c.direction is Direction.ROW_WISE else Direction.ROW_WISE
    )
    return Compressed24(c.cols, c.rows, direction, c.values, c.meta)


# ---------------------------------------------------------------------------
# products


def dense_matmul(a, b) -> Matrix:
    """Reference dense product with per-cell accumulation strictly
    ascending in the contraction index."""
    am = as_array(a, np.float64)
    bm = as_array(b, np.float64)
    if am.shape[1] != bm.shape[0]:
        raise ShapeError(f"inner dims differ: {am.shape} x {bm.shape}")
    return Matrix.row_major(kernels.matmul_ref(am, bm))


def spmm(a: Compressed24, b) -> Matrix:
    """C = A @ B with A row-wise 2:4 compressed.

    Bit-for-bit equal to dense_matmul(decompress(a), b); the inner loop
    skips pruned positions.
    """
    if a.direction is not Direction.ROW_WISE:
        raise FormatError("left operand must be row-wise compressed")
    bm = as_array(b, np.float64)
    if a.cols != bm.shape[0]:
        raise ShapeError(f"inner dims differ: ({a.rows},{a.cols}) x {bm.shape}")
    values2d, pos2d = a._slots()
    return Matrix.row_major(kernels.spmm_rowwise(values2d, pos2d, bm))


def spmm_right(a, b: Compressed24) -> Matrix:
    """C = A @ B with B column-wise 2:4 compressed; output is column-major."""
    if b.direction is not Direction.COL_WISE:
        raise FormatError("right operand must be column-wise compressed")
    am = as_array(a, np.float64)
    if am.shape[1] != b.rows:
        raise ShapeError(f"inner dims differ: {am.shape} x ({b.rows},{b.cols})")
    values2d, pos2d = b._slots()
    return Matrix.col_major(kernels.spmm_colwise(am, values2d, pos2d))


def dense_matmul_flops(m: int, k: int, n: int) -> int:
    return 2 * m * k * n


def sparse_matmul_flops(m: int, k: int, n: int) -> int:
    """Half the dense count: two of every four contraction terms are skipped."""
    return m * k * n


# ---------------------------------------------------------------------------
# operand-layout planner


class Operand(Enum):
    S = "S"  # row-wise 2:4 compressed
    ST = "ST"  # transpose view of a row-wise compressed matrix
    R = "R"  # row-major dense
    C = "C"  # column-major dense


@dataclass(frozen=True)
class LayoutQuery:
    left: Operand
    right: Operand


class PlanResult(Enum):
    OUT_ROW_MAJOR = "row_major"
    OUT_COL_MAJOR = "col_major"
    INCOMPATIBLE = "incompatible"


# Supported operand-layout combinations of the simulated sparse GEMM and
# the storage order each one produces.  A sparse operand is usable only as
# a row-wise left factor or as a transposed (column-wise) right factor.
_PLAN = {
    (Operand.S, Operand.R): PlanResult.OUT_ROW_MAJOR,
    (Operand.S, Operand.C): PlanResult.OUT_ROW_MAJOR,
    (Operand.R, Operand.ST): PlanResult.OUT_COL_MAJOR,
    (Operand.C, Operand.ST): PlanResult.OUT_COL_MAJOR,
    (Operand.R, Operand.R): PlanResult.OUT_ROW_MAJOR,
    (Operand.R, Operand.C): PlanResult.OUT_ROW_MAJOR,
    (Operand.C, Operand.R): PlanResult.OUT_ROW_MAJOR,
    (Operand.C, Operand.C): PlanResult.OUT_ROW_MAJOR,
}


def layout_plan(q: LayoutQuery) -> PlanResult:
    """Output storage order for a product, or INCOMPATIBLE when a sparse
    operand sits in an unsupported slot."""
    return _PLAN.get((q.left, q.right), PlanResult.INCOMPATIBLE)
