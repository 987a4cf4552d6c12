"""Compressed storage, simulated sparse products, and the layout planner."""

import numpy as np
import pytest

from sparse24.matrix import Direction, FormatError, Layout, Matrix, ShapeError
from sparse24.sparsity import Mask24, SparseEstimate, prune_2of4
from sparse24.spmm import (
    Compressed24,
    LayoutQuery,
    Operand,
    PlanResult,
    compress,
    decompress,
    dense_matmul,
    layout_plan,
    mask_of,
    spmm,
    spmm_right,
    transpose_view,
)


class TestCompressDecompress:
    def test_single_group_packing(self):
        est = prune_2of4(np.array([[0.0, 5.0, 0.0, -3.0]]))
        c = compress(est)
        np.testing.assert_array_equal(c.values, [5.0, -3.0])
        assert c.meta[0] == (1 | (3 << 2))

    def test_buffer_sizes(self, rng):
        c = compress(prune_2of4(rng.standard_normal((4, 8))))
        assert c.values.size == 16
        assert c.meta.size == 8

    def test_roundtrip_both_directions(self, rng):
        for direction, shape in (
            (Direction.ROW_WISE, (8, 12)),
            (Direction.COL_WISE, (12, 8)),
        ):
            est = prune_2of4(rng.standard_normal(shape), direction)
            c = compress(est)
            dec = decompress(c)
            np.testing.assert_array_equal(dec.to_array(), est.values)
            again = compress(SparseEstimate(dec.to_array(), est.mask))
            np.testing.assert_array_equal(again.values, c.values)
            np.testing.assert_array_equal(again.meta, c.meta)

    def test_decompress_layout_follows_direction(self, rng):
        row = compress(prune_2of4(rng.standard_normal((4, 8)), Direction.ROW_WISE))
        col = compress(prune_2of4(rng.standard_normal((8, 4)), Direction.COL_WISE))
        assert decompress(row).layout is Layout.ROW_MAJOR
        assert decompress(col).layout is Layout.COL_MAJOR

    def test_mask_reconstruction(self, rng):
        est = prune_2of4(rng.standard_normal((8, 8)))
        c = compress(est)
        np.testing.assert_array_equal(mask_of(c).bits, est.mask.bits)

    def test_invalid_mask_rejected(self):
        bits = np.ones((2, 4), dtype=np.uint8)  # four ones per group
        est = SparseEstimate.__new__(SparseEstimate)
        est.values = np.ones((2, 4))
        est.mask = Mask24(bits, Direction.ROW_WISE)
        with pytest.raises(FormatError):
            compress(est)

    def test_nonascending_meta_rejected(self):
        c = Compressed24(1, 4, Direction.ROW_WISE, np.zeros(2), np.array([2 | (1 << 2)], dtype=np.uint8))
        with pytest.raises(FormatError):
            decompress(c)

    def test_equal_meta_rejected(self):
        c = Compressed24(1, 4, Direction.ROW_WISE, np.zeros(2), np.array([1 | (1 << 2)], dtype=np.uint8))
        with pytest.raises(FormatError):
            decompress(c)


class TestSpmm:
    def test_bit_for_bit_against_dense_reference(self, rng):
        for _ in range(50):
            m = 4 * int(rng.integers(1, 9))
            k = 4 * int(rng.integers(1, 9))
            n = int(rng.integers(1, 24))
            a = compress(prune_2of4(rng.standard_normal((m, k))))
            b = rng.standard_normal((k, n))
            got = spmm(a, b)
            ref = dense_matmul(decompress(a), b)
            assert got.data.tobytes() == ref.data.tobytes()
            assert got.layout is Layout.ROW_MAJOR

    def test_selector_rows(self):
        # compressed identity-like pattern picks rows of b
        dense = np.zeros((4, 8))
        dense[0, 0] = dense[1, 1] = dense[2, 4] = dense[3, 5] = 1.0
        est = prune_2of4(dense)
        b = np.arange(16.0).reshape(8, 2)
        out = spmm(compress(est), b).to_array()
        np.testing.assert_array_equal(out, b[[0, 1, 4, 5]])

    def test_zero_values_give_zero_output(self, rng):
        est = prune_2of4(np.zeros((4, 8)))
        out = spmm(compress(est), rng.standard_normal((8, 3)))
        assert (out.to_array() == 0).all()

    def test_shape_mismatch(self, rng):
        a = compress(prune_2of4(rng.standard_normal((4, 8))))
        with pytest.raises(ShapeError):
            spmm(a, rng.standard_normal((4, 3)))

    def test_wrong_direction_rejected(self, rng):
        a = compress(prune_2of4(rng.standard_normal((8, 4)), Direction.COL_WISE))
        with pytest.raises(FormatError):
            spmm(a, rng.standard_normal((4, 3)))


class TestSpmmRight:
    def test_bit_for_bit_against_dense_reference(self, rng):
        for _ in range(50):
            m = int(rng.integers(1, 24))
            k = 4 * int(rng.integers(1, 9))
            n = 4 * int(rng.integers(1, 9))
            b = compress(prune_2of4(rng.standard_normal((k, n)), Direction.COL_WISE))
            a = rng.standard_normal((m, k))
            got = spmm_right(a, b)
            ref = dense_matmul(a, decompress(b))
            assert np.array_equal(got.to_array(), ref.to_array())
            assert got.data.ravel(order="F").tobytes() == ref.data.ravel(order="F").tobytes()
            assert got.layout is Layout.COL_MAJOR

    def test_transpose_view_roundtrip(self, rng):
        a = compress(prune_2of4(rng.standard_normal((8, 16))))
        t = transpose_view(a)
        assert (t.rows, t.cols, t.direction) == (16, 8, Direction.COL_WISE)
        np.testing.assert_array_equal(decompress(t).to_array(), decompress(a).to_array().T)
        back = transpose_view(t)
        assert back.direction is Direction.ROW_WISE
        np.testing.assert_array_equal(decompress(back).to_array(), decompress(a).to_array())

    def test_zero_values(self, rng):
        b = compress(prune_2of4(np.zeros((8, 4)), Direction.COL_WISE))
        out = spmm_right(rng.standard_normal((3, 8)), b)
        assert (out.to_array() == 0).all()

    def test_selector_columns(self):
        dense = np.zeros((8, 4))
        dense[0, 0] = dense[1, 0] = dense[4, 1] = dense[5, 1] = 1.0
        dense[2, 2] = dense[3, 2] = dense[6, 3] = dense[7, 3] = 1.0
        b = compress(prune_2of4(dense, Direction.COL_WISE))
        a = np.arange(16.0).reshape(2, 8)
        out = spmm_right(a, b).to_array()
        expect = np.stack(
            [a[:, 0] + a[:, 1], a[:, 4] + a[:, 5], a[:, 2] + a[:, 3], a[:, 6] + a[:, 7]],
            axis=1,
        )
        np.testing.assert_array_equal(out, expect)

    def test_wrong_direction_rejected(self, rng):
        b = compress(prune_2of4(rng.standard_normal((4, 8)), Direction.ROW_WISE))
        with pytest.raises(FormatError):
            spmm_right(rng.standard_normal((3, 4)), b)


class TestDenseMatmul:
    def test_matches_blas_within_tolerance(self, rng):
        a = rng.standard_normal((16, 32))
        b = rng.standard_normal((32, 8))
        np.testing.assert_allclose(dense_matmul(a, b).to_array(), a @ b, rtol=1e-12)

    def test_accepts_matrix_wrappers(self, rng):
        a = Matrix.col_major(rng.standard_normal((4, 4)))
        b = Matrix.row_major(rng.standard_normal((4, 4)))
        out = dense_matmul(a, b)
        np.testing.assert_allclose(out.to_array(), a.to_array() @ b.to_array(), rtol=1e-12)


class TestLayoutPlan:
    # the full 16-cell compatibility table of the simulated sparse GEMM
    CELLS = {
        ("S", "S"): PlanResult.INCOMPATIBLE,
        ("S", "ST"): PlanResult.INCOMPATIBLE,
        ("S", "R"): PlanResult.OUT_ROW_MAJOR,
        ("S", "C"): PlanResult.OUT_ROW_MAJOR,
        ("ST", "S"): PlanResult.INCOMPATIBLE,
        ("ST", "ST"): PlanResult.INCOMPATIBLE,
        ("ST", "R"): PlanResult.INCOMPATIBLE,
        ("ST", "C"): PlanResult.INCOMPATIBLE,
        ("R", "S"): PlanResult.INCOMPATIBLE,
        ("R", "ST"): PlanResult.OUT_COL_MAJOR,
        ("R", "R"): PlanResult.OUT_ROW_MAJOR,
        ("R", "C"): PlanResult.OUT_ROW_MAJOR,
        ("C", "S"): PlanResult.INCOMPATIBLE,
        ("C", "ST"): PlanResult.OUT_COL_MAJOR,
        ("C", "R"): PlanResult.OUT_ROW_MAJOR,
        ("C", "C"): PlanResult.OUT_ROW_MAJOR,
    }

    @pytest.mark.parametrize("left,right", list(CELLS))
    def test_every_cell(self, left, right):
        got = layout_plan(LayoutQuery(Operand(left), Operand(right)))
        assert got is self.CELLS[(left, right)]

    def test_training_products_are_compatible(self):
        # forward: dense activations times transposed sparse weights
        fwd = layout_plan(LayoutQuery(Operand.R, Operand.ST))
        # input gradients: column-major upstream times transposed sparse weights
        bwd_x = layout_plan(LayoutQuery(Operand.C, Operand.ST))
        # weight gradients: sparse transposed upstream times dense input
        bwd_w = layout_plan(LayoutQuery(Operand.S, Operand.R))
        assert fwd is PlanResult.OUT_COL_MAJOR
        assert bwd_x is PlanResult.OUT_COL_MAJOR
        assert bwd_w is PlanResult.OUT_ROW_MAJOR

    def test_forward_output_really_is_col_major(self, rng):
        # the planner's forward cell matches what spmm_right produces
        w = compress(prune_2of4(rng.standard_normal((8, 16))))
        out = spmm_right(rng.standard_normal((4, 16)), transpose_view(w))
        assert out.layout is Layout.COL_MAJOR
        assert out.data.flags["F_CONTIGUOUS"]
