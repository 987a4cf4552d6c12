"""Dense 2-D array container with an explicit storage-order tag."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's preconditions."""


class FormatError(ValueError):
    """A mask or compressed buffer violates its structural invariants."""


class Layout(Enum):
    ROW_MAJOR = "row_major"
    COL_MAJOR = "col_major"


class Direction(Enum):
    """Axis along which 2:4 groups of four consecutive elements run."""

    ROW_WISE = "row_wise"  # groups of 4 consecutive elements within a row
    COL_WISE = "col_wise"  # groups of 4 consecutive elements within a column


@dataclass
class Matrix:
    """A rows x cols float array whose memory order matches `layout`.

    The logical element (i, j) is independent of the layout; the tag only
    records how the flat buffer is laid out, which is what the layout
    planner and the traversal benchmarks care about.
    """

    data: np.ndarray
    layout: Layout = Layout.ROW_MAJOR

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ShapeError(f"Matrix requires a 2-D array, got ndim={arr.ndim}")
        if self.layout is Layout.ROW_MAJOR:
            arr = np.ascontiguousarray(arr)
        else:
            arr = np.asfortranarray(arr)
        self.data = arr

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def row_major(cls, arr: np.ndarray) -> "Matrix":
        return cls(arr, Layout.ROW_MAJOR)

    @classmethod
    def col_major(cls, arr: np.ndarray) -> "Matrix":
        return cls(arr, Layout.COL_MAJOR)

    def to_array(self) -> np.ndarray:
        """The logical 2-D array (layout-independent view)."""
        return self.data

    def flat(self) -> np.ndarray:
        """The underlying buffer in storage order, length rows*cols."""
        order = "C" if self.layout is Layout.ROW_MAJOR else "F"
        return self.data.ravel(order=order)


def as_array(m: "Matrix | np.ndarray", dtype=None) -> np.ndarray:
    """Accept either a Matrix or a plain 2-D ndarray."""
    arr = m.data if isinstance(m, Matrix) else np.asarray(m)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D operand, got ndim={arr.ndim}")
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return arr
