"""Pruning functions, 4x4 transposable patterns, mask search, and the
unbiased stochastic 2-of-4 sparsifier."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .backend import kernels
from .matrix import Direction, FormatError, Matrix, ShapeError, as_array

__all__ = [
    "Mask24",
    "TransposableMask",
    "PatternTable",
    "SparseEstimate",
    "prune_2of4",
    "enumerate_patterns",
    "transposable_search_conv",
    "transposable_search_greedy",
    "mvue_prune",
    "mvue_inclusion_probs",
    "mvue_pair_probs",
    "mvue_slots_rowwise",
    "MVUE_PAIRS",
    "apply_mask",
]


# ---------------------------------------------------------------------------
# group helpers


def _check_groupable(shape: tuple[int, int], direction: Direction) -> None:
    rows, cols = shape
    if direction is Direction.ROW_WISE and cols % 4 != 0:
        raise ShapeError(f"cols={cols} not divisible by 4 for row-wise groups")
    if direction is Direction.COL_WISE and rows % 4 != 0:
        raise ShapeError(f"rows={rows} not divisible by 4 for column-wise groups")


def to_groups(arr: np.ndarray, direction: Direction) -> np.ndarray:
    """View a 2-D array as (ngroups, 4) groups along `direction`.

    Row-wise groups are ordered row-major (row, then group within row);
    column-wise groups are ordered column-major.
    """
    _check_groupable(arr.shape, direction)
    if direction is Direction.COL_WISE:
        arr = arr.T
    return np.ascontiguousarray(arr).reshape(-1, 4)


def from_groups(groups: np.ndarray, shape: tuple[int, int], direction: Direction) -> np.ndarray:
    """Inverse of to_groups."""
    rows, cols = shape
    if direction is Direction.COL_WISE:
        return np.ascontiguousarray(groups.reshape(cols, rows).T)
    return groups.reshape(rows, cols)


def _blocks_16(arr: np.ndarray) -> np.ndarray:
    """Flatten aligned 4x4 blocks to (nblocks, 16) rows, row-major."""
    r, c = arr.shape
    if r % 4 != 0 or c % 4 != 0:
        raise ShapeError(f"shape {arr.shape} not divisible into 4x4 blocks")
    return np.ascontiguousarray(
        arr.reshape(r // 4, 4, c // 4, 4).transpose(0, 2, 1, 3).reshape(-1, 16)
    )


def _blocks_to_full(blocks16: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    r, c = shape
    return np.ascontiguousarray(
        blocks16.reshape(r // 4, c // 4, 4, 4).transpose(0, 2, 1, 3).reshape(r, c)
    )


# ---------------------------------------------------------------------------
# mask types


@dataclass
class Mask24:
    """Binary mask with exactly two ones per aligned group of four."""

    bits: np.ndarray
    direction: Direction

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.uint8)

    def validate(self) -> None:
        if self.bits.ndim != 2:
            raise FormatError("mask must be 2-D")
        _check_groupable(self.bits.shape, self.direction)
        if self.bits.max(initial=0) > 1:
            raise FormatError("mask bits must be 0/1")
        sums = to_groups(self.bits, self.direction).sum(axis=1)
        if not (sums == 2).all():
            raise FormatError("every group of 4 must contain exactly 2 ones")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape


@dataclass
class TransposableMask:
    """Mask whose aligned 4x4 blocks hold exactly two ones per block row
    and per block column, so the mask and its transpose are both valid
    2:4 masks."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.uint8)

    def validate(self) -> None:
        if self.bits.ndim != 2:
            raise FormatError("mask must be 2-D")
        blocks = _blocks_16(self.bits).reshape(-1, 4, 4)
        if self.bits.max(initial=0) > 1:
            raise FormatError("mask bits must be 0/1")
        if not (blocks.sum(axis=(1, 2)) == 8).all():
            raise FormatError("every 4x4 block must contain exactly 8 ones")
        if not (blocks.sum(axis=2) == 2).all() or not (blocks.sum(axis=1) == 2).all():
            raise FormatError("every block row and column must contain exactly 2 ones")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def transpose(self) -> "TransposableMask":
        return TransposableMask(np.ascontiguousarray(self.bits.T))

    def to_mask24(self, direction: Direction) -> Mask24:
        return Mask24(self.bits, direction)

    def retained_l1(self, w) -> float:
        """Sum of |w| over kept positions."""
        return float(np.abs(as_array(w))[self.bits == 1].sum())


@dataclass
class SparseEstimate:
    """A pruned matrix (zeros at dropped positions) with its mask."""

    values: np.ndarray
    mask: Mask24

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.mask.bits.shape:
            raise ShapeError("values and mask shapes differ")


# ---------------------------------------------------------------------------
# pattern table


@dataclass(frozen=True)
class PatternTable:
    """All 4x4 binary blocks with row and column sums 2, in lexicographic
    order of their row-major flattened bits."""

    patterns: np.ndarray  # (n, 4, 4) uint8
    positions: np.ndarray  # (n, 8) int32, kept flat positions ascending

    def __len__(self) -> int:
        return len(self.patterns)

    @property
    def count(self) -> int:
        return len(self.patterns)

    def to_text(self) -> str:
        lines = ["".join(str(b) for b in p.reshape(16)) for p in self.patterns]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PatternTable":
        rows = [
            [int(ch) for ch in line.strip()]
            for line in text.strip().splitlines()
            if line.strip()
        ]
        pats = np.array(rows, dtype=np.uint8).reshape(-1, 4, 4)
        return cls(pats, _positions_of(pats))

    def index_of(self, block) -> int:
        """Index of a 4x4 block in the table; raises if absent."""
        flat = np.asarray(block, dtype=np.uint8).reshape(16)
        hits = np.nonzero((self.patterns.reshape(-1, 16) == flat).all(axis=1))[0]
        if len(hits) == 0:
            raise KeyError("block is not a transposable pattern")
        return int(hits[0])


def _positions_of(patterns: np.ndarray) -> np.ndarray:
    flat = patterns.reshape(len(patterns), 16)
    return np.array([np.nonzero(row)[0] for row in flat], dtype=np.int32)


@lru_cache(maxsize=1)
def _pattern_table() -> PatternTable:
    rows = [c for c in itertools.product((0, 1), repeat=4) if sum(c) == 2]
    pats = []
    for combo in itertools.product(rows, repeat=4):
        if all(sum(r[j] for r in combo) == 2 for j in range(4)):
            pats.append(tuple(b for r in combo for b in r))
    pats.sort()
    arr = np.array(pats, dtype=np.uint8).reshape(-1, 4, 4)
    return PatternTable(arr, _positions_of(arr))


def enumerate_patterns() -> PatternTable:
    """Exhaustively enumerate the 4x4 transposable patterns (90 of them)."""
    return _pattern_table()


# ---------------------------------------------------------------------------
# deterministic pruning


def prune_2of4(m, direction: Direction = Direction.ROW_WISE) -> SparseEstimate:
    """Keep the two largest-magnitude entries of each aligned group of 4.

    Ties break toward the lowest index within the group.
    """
    arr = as_array(m, np.float64)
    groups = to_groups(arr, direction)
    keep = kernels.prune_2of4_keep(groups)
    bits = from_groups(keep, arr.shape, direction)
    return SparseEstimate(arr * bits, Mask24(bits, direction))


def apply_mask(w, mask):
    """Elementwise product of a matrix with a binary mask."""
    bits = mask.bits if isinstance(mask, (Mask24, TransposableMask)) else np.asarray(mask)
    if isinstance(w, Matrix):
        if w.shape != bits.shape:
            raise ShapeError(f"mask shape {bits.shape} != matrix shape {w.shape}")
        return Matrix(w.data * bits, w.layout)
    arr = np.asarray(w)
    if arr.shape != bits.shape:
        raise ShapeError(f"mask shape {bits.shape} != matrix shape {arr.shape}")
    return arr * bits


# ---------------------------------------------------------------------------
# transposable mask search


def transposable_search_conv(w, table: PatternTable | None = None) -> TransposableMask:
    """Exhaustive per-block pattern search, phrased as scoring every
    pattern against every block (the convolution formulation).

    Per block the selected pattern maximizes the retained L1 norm; ties
    break toward the lowest pattern index in canonical order.
    """
    arr = as_array(w, np.float64)
    if table is None:
        table = enumerate_patterns()
    absblocks = np.abs(_blocks_16(arr))
    _, best = kernels.pattern_scores(absblocks, table.positions)
    mask16 = table.patterns.reshape(len(table), 16)[best]
    return TransposableMask(_blocks_to_full(mask16, arr.shape))


def transposable_search_greedy(w) -> TransposableMask:
    """2-approximation: per block, repeatedly pick the largest-magnitude
    element whose block row and column still have fewer than two picks."""
    arr = as_array(w, np.float64)
    masks16 = kernels.greedy_masks(np.abs(_blocks_16(arr)))
    return TransposableMask(_blocks_to_full(masks16, arr.shape))


# ---------------------------------------------------------------------------
# unbiased stochastic 2-of-4 pruning

MVUE_PAIRS = np.array(
    [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], dtype=np.int64
)


def mvue_inclusion_probs(groups: np.ndarray) -> np.ndarray:
    """Water-filled inclusion probabilities pi with sum(pi) = 2 per group.

    pi_i = min(1, c*|x_i|) with c chosen so the group sums to 2.  With
    fewer than two nonzeros the nonzeros are kept deterministically and
    the residual mass is spread uniformly over the zeros.
    """
    absg = np.abs(np.asarray(groups, dtype=np.float64))
    if absg.ndim != 2 or absg.shape[1] != 4:
        raise ShapeError("groups must have shape (n, 4)")
    total = absg.sum(axis=1)
    amax = absg.max(axis=1)
    first_max = np.arange(4)[None, :] == absg.argmax(axis=1)[:, None]
    # residual mass summed directly: total - amax would cancel badly when
    # one entry dominates, and the marginals must stay exact to 1e-12
    rest = np.where(first_max, 0.0, absg).sum(axis=1)
    clamp = amax > rest

    # the quotient at the max position may overflow; it is discarded below
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        plain = 2.0 * absg / total[:, None]
        capped = absg / rest[:, None]
    # the clamped maximum is unique whenever clamping triggers
    capped = np.where(first_max, 1.0, capped)
    pi = np.where(clamp[:, None], capped, plain)

    nnz = np.count_nonzero(absg, axis=1)
    if (nnz < 2).any():
        one = nnz == 1
        if one.any():
            pi[one] = np.where(absg[one] > 0, 1.0, 1.0 / 3.0)
        zero = nnz == 0
        if zero.any():
            pi[zero] = 0.5
    return pi


def mvue_pair_probs(pi: np.ndarray) -> np.ndarray:
    """Distribution over the six kept-index pairs matching marginals pi.

    Pairs are processed in lexicographic order (MVUE_PAIRS); each pair
    takes the largest probability that keeps the remaining marginals
    coverable by the remaining pairs (a greedy transportation fill).
    """
    pi = np.asarray(pi, dtype=np.float64)
    r0, r1, r2, r3 = (pi[:, i].copy() for i in range(4))
    s = 0.5 * pi.sum(axis=1)

    p01 = np.clip(np.minimum.reduce([r0, r1, s - r2, s - r3]), 0.0, None)
    r0 -= p01
    r1 -= p01
    s -= p01
    p02 = np.clip(np.minimum.reduce([r0, r2, s - r3]), 0.0, None)
    r0 -= p02
    r2 -= p02
    s -= p02
    p03 = np.clip(np.minimum(r0, r3), 0.0, None)
    r3 -= p03
    s -= p03
    p12 = np.clip(np.minimum.reduce([r1, r2, s - r3]), 0.0, None)
    r1 -= p12
    r2 -= p12
    p13 = np.clip(np.minimum(r1, r3), 0.0, None)
    r3 -= p13
    p23 = np.clip(np.minimum(r2, r3), 0.0, None)
    return np.stack([p01, p02, p03, p12, p13, p23], axis=1)


def _mvue_kept(groups: np.ndarray, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Core draw: per group, the kept index pair (ascending) and the
    rescaled kept values, shape (ngroups, 2) each."""
    pi = mvue_inclusion_probs(groups)
    probs = mvue_pair_probs(pi)

    rng = np.random.default_rng(int(rng_seed) & 0xFFFF_FFFF_FFFF_FFFF)
    u = rng.random(len(groups))
    cum = np.cumsum(probs, axis=1)
    draw = u * cum[:, -1]
    idx = np.minimum(np.sum(cum <= draw[:, None], axis=1), 5)

    kept = MVUE_PAIRS[idx]
    rows = np.arange(len(groups))
    values = np.empty((len(groups), 2))
    for slot in (0, 1):
        ki = kept[:, slot]
        values[:, slot] = groups[rows, ki] / pi[rows, ki]
    return values, kept


def mvue_prune(g, direction: Direction = Direction.ROW_WISE, rng_seed: int = 0) -> SparseEstimate:
    """Unbiased stochastic 2-of-4 sparsifier.

    Exactly two entries per group are kept; a kept entry x_i is rescaled
    to x_i/pi_i so the estimator's expectation equals the input exactly.
    Deterministic given the seed (any 64-bit value is accepted).
    """
    arr = as_array(g, np.float64)
    groups = to_groups(arr, direction)
    kept_values, kept = _mvue_kept(groups, rng_seed)
    rows = np.arange(len(groups))
    out = np.zeros_like(groups)
    bits = np.zeros(groups.shape, dtype=np.uint8)
    for slot in (0, 1):
        ki = kept[:, slot]
        out[rows, ki] = kept_values[:, slot]
        bits[rows, ki] = 1
    values = from_groups(out, arr.shape, direction)
    mask = Mask24(from_groups(bits, arr.shape, direction), direction)
    return SparseEstimate(values, mask)


def mvue_slots_rowwise(arr: np.ndarray, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise stochastic sparsification straight to kernel operands.

    Returns (values2d, pos2d) of shape (rows, cols/2): the same draw as
    mvue_prune + compress for the same seed, without the packed object.
    """
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    m, k = arr.shape
    _check_groupable(arr.shape, Direction.ROW_WISE)
    values, kept = _mvue_kept(arr.reshape(-1, 4), rng_seed)
    offs = 4 * np.arange(k // 4, dtype=np.int64)
    pos = kept.reshape(m, k // 4, 2) + offs[None, :, None]
    return values.reshape(m, k // 2), pos.reshape(m, k // 2)
