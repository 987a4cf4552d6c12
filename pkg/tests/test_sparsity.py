"""Pruning, pattern table, mask searches, and the stochastic sparsifier."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparse24.matrix import Direction, FormatError, ShapeError
from sparse24.sparsity import (
    MVUE_PAIRS,
    Mask24,
    TransposableMask,
    apply_mask,
    enumerate_patterns,
    mvue_inclusion_probs,
    mvue_pair_probs,
    mvue_prune,
    mvue_slots_rowwise,
    prune_2of4,
    transposable_search_conv,
    transposable_search_greedy,
)


def blocks_of(w):
    r, c = w.shape
    return w.reshape(r // 4, 4, c // 4, 4).transpose(0, 2, 1, 3).reshape(-1, 16)


def independent_patterns():
    """4x4 blocks with row/col sums two, enumerated from 16-bit words."""
    pats = []
    for word in range(1 << 16):
        bits = [(word >> (15 - i)) & 1 for i in range(16)]
        rows = [sum(bits[4 * r : 4 * r + 4]) for r in range(4)]
        cols = [sum(bits[c::4]) for c in range(4)]
        if rows == [2, 2, 2, 2] and cols == [2, 2, 2, 2]:
            pats.append(tuple(bits))
    pats.sort()
    return pats


finite_matrices = arrays(
    np.float64,
    st.tuples(st.sampled_from([4, 8, 12]), st.sampled_from([4, 8, 12])),
    elements=st.floats(-100, 100, allow_nan=False),
)


class TestPrune2of4:
    def test_two_largest_magnitudes(self):
        est = prune_2of4(np.array([[1.0, -2.0, 3.0, 0.5]]))
        np.testing.assert_array_equal(est.values, [[0.0, -2.0, 3.0, 0.0]])
        np.testing.assert_array_equal(est.mask.bits, [[0, 1, 1, 0]])

    def test_all_tie_keeps_lowest_indices(self):
        est = prune_2of4(np.zeros((1, 4)))
        np.testing.assert_array_equal(est.mask.bits, [[1, 1, 0, 0]])

    def test_retained_l1_is_bruteforce_optimum(self, rng):
        w = rng.standard_normal((8, 8))
        est = prune_2of4(w, Direction.ROW_WISE)
        for group, kept in zip(w.reshape(-1, 4), est.values.reshape(-1, 4)):
            best = max(
                abs(group[i]) + abs(group[j])
                for i, j in itertools.combinations(range(4), 2)
            )
            assert abs(np.abs(kept).sum() - best) < 1e-12

    def test_column_direction(self, rng):
        w = rng.standard_normal((8, 6))
        est = prune_2of4(w, Direction.COL_WISE)
        est.mask.validate()
        assert (est.mask.bits.sum(axis=0) == w.shape[0] // 2).all()

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            prune_2of4(np.zeros((2, 6)), Direction.ROW_WISE)

    def test_idempotent(self, rng):
        w = rng.standard_normal((12, 8))
        once = prune_2of4(w)
        twice = prune_2of4(once.values)
        np.testing.assert_array_equal(once.values, twice.values)

    @given(finite_matrices)
    @settings(max_examples=40, deadline=None)
    def test_mask_always_valid_and_scale_invariant(self, w):
        est = prune_2of4(w, Direction.ROW_WISE)
        est.mask.validate()
        scaled = prune_2of4(7.25 * w, Direction.ROW_WISE)
        np.testing.assert_array_equal(est.mask.bits, scaled.mask.bits)


class TestPatternTable:
    def test_count_is_90(self):
        assert enumerate_patterns().count == 90

    def test_row_and_column_sums(self):
        table = enumerate_patterns()
        assert (table.patterns.sum(axis=1) == 2).all()
        assert (table.patterns.sum(axis=2) == 2).all()

    def test_closed_under_transpose(self):
        table = enumerate_patterns()
        flat = {tuple(p.reshape(16)) for p in table.patterns}
        for p in table.patterns:
            assert tuple(p.T.reshape(16)) in flat

    def test_known_member(self):
        block = [[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]]
        enumerate_patterns().index_of(block)

    def test_matches_independent_enumeration(self):
        table = enumerate_patterns()
        got = [tuple(p.reshape(16)) for p in table.patterns]
        assert got == independent_patterns()

    def test_text_roundtrip(self):
        table = enumerate_patterns()
        again = type(table).from_text(table.to_text())
        np.testing.assert_array_equal(table.patterns, again.patterns)


class TestTransposableSearch:
    def test_dominant_pattern_selected(self):
        table = enumerate_patterns()
        pattern = table.patterns[37].astype(float)
        w = np.where(pattern > 0, 10.0, 1.0)
        mask = transposable_search_conv(w)
        np.testing.assert_array_equal(mask.bits, table.patterns[37])

    def test_equals_per_block_bruteforce(self, rng):
        pats = independent_patterns()
        for _ in range(30):
            w = rng.standard_normal((16, 16))
            mask = transposable_search_conv(w)
            got16 = blocks_of(mask.bits)
            for bi, absblock in enumerate(np.abs(blocks_of(w))):
                best_idx, best = 0, None
                for t, bits in enumerate(pats):
                    s = 0.0
                    for pos in range(16):
                        if bits[pos]:
                            s += float(absblock[pos])
                    if best is None or s > best:
                        best_idx, best = t, s
                assert tuple(got16[bi]) == pats[best_idx]

    def test_transpose_of_result_is_valid(self, rng):
        w = rng.standard_normal((8, 12))
        mask = transposable_search_conv(w)
        mask.validate()
        mask.transpose().validate()

    def test_greedy_matches_conv_on_dominant_block(self):
        table = enumerate_patterns()
        pattern = table.patterns[5].astype(float)
        w = np.where(pattern > 0, 50.0, 1.0)
        np.testing.assert_array_equal(
            transposable_search_greedy(w).bits, transposable_search_conv(w).bits
        )

    def test_greedy_all_equal_block_is_valid(self):
        transposable_search_greedy(np.ones((4, 4))).validate()

    def test_greedy_stuck_scan_is_repaired(self):
        # six dominant picks cover a 3x3 corner 2-regularly, the seventh
        # pick strands the last row/column at one pick each
        w = np.array(
            [
                [10.0, 10.0, 0.01, 0.3],
                [10.0, 10.0, 0.01, 0.3],
                [0.02, 0.02, 10.0, 0.3],
                [0.4, 0.4, 10.0, 9.0],
            ]
        )
        mask = transposable_search_greedy(w)
        mask.validate()

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            transposable_search_conv(np.zeros((6, 8)))

    @given(finite_matrices)
    @settings(max_examples=40, deadline=None)
    def test_bound_chain_holds_everywhere(self, w):
        if w.shape[0] % 4 or w.shape[1] % 4:
            return
        pats = independent_patterns()
        conv = transposable_search_conv(w)
        greedy = transposable_search_greedy(w)
        conv.validate()
        greedy.validate()
        for absblock, cbits, gbits in zip(
            np.abs(blocks_of(w)), blocks_of(conv.bits), blocks_of(greedy.bits)
        ):
            opt = max(
                sum(absblock[p] for p in range(16) if bits[p]) for bits in pats
            )
            r_conv = float((absblock * cbits).sum())
            r_greedy = float((absblock * gbits).sum())
            scale = max(opt, 1.0)
            assert r_conv >= r_greedy - 1e-9 * scale
            assert r_greedy >= 0.5 * opt - 1e-9 * scale
            assert abs(r_conv - opt) <= 1e-9 * scale


class TestMvue:
    def test_uniform_group_probabilities(self):
        pi = mvue_inclusion_probs(np.ones((1, 4)))
        np.testing.assert_allclose(pi, 0.5)
        probs = mvue_pair_probs(pi)
        marg = np.zeros(4)
        for p, (i, j) in zip(probs[0], MVUE_PAIRS):
            marg[i] += p
            marg[j] += p
        np.testing.assert_allclose(marg, 0.5, atol=1e-15)
        # kept entries are rescaled by 1/pi = 2, expectation is the input
        est = mvue_prune(np.ones((1, 4)), rng_seed=3)
        assert set(est.values[0]) <= {0.0, 2.0}
        assert est.values[0].sum() == 4.0

    def test_dominant_entry_clamped_and_unscaled(self):
        est = mvue_prune(np.array([[5.0, 0.0, 0.0, 0.0]]), rng_seed=9)
        assert est.values[0, 0] == 5.0
        pi = mvue_inclusion_probs(np.array([[5.0, 0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(pi, [[1.0, 1 / 3, 1 / 3, 1 / 3]])

    def test_marginals_match_inclusion_probs(self, rng):
        groups = rng.standard_normal((5000, 4))
        groups[rng.random(5000) < 0.15, 0] = 0.0
        groups[:3] = 0.0
        pi = mvue_inclusion_probs(groups)
        np.testing.assert_allclose(pi.sum(axis=1), 2.0, atol=1e-9)
        probs = mvue_pair_probs(pi)
        assert (probs >= 0).all()
        marg = np.zeros_like(pi)
        for p, (i, j) in enumerate(MVUE_PAIRS):
            marg[:, i] += probs[:, p]
            marg[:, j] += probs[:, p]
        assert np.max(np.abs(marg - pi)) < 1e-12

    def test_monte_carlo_mean_within_four_standard_errors(self, rng):
        x = rng.standard_normal(4)
        n = 1_000_000
        est = mvue_prune(np.tile(x, (n, 1)), rng_seed=7)
        mean = est.values.mean(axis=0)
        se = est.values.std(axis=0) / np.sqrt(n)
        assert (np.abs(mean - x) <= 4 * se).all()

    def test_exactly_two_kept_per_group(self, rng):
        est = mvue_prune(rng.standard_normal((16, 12)), rng_seed=11)
        est.mask.validate()

    def test_deterministic_given_seed(self, rng):
        g = rng.standard_normal((8, 8))
        a = mvue_prune(g, rng_seed=123)
        b = mvue_prune(g, rng_seed=123)
        np.testing.assert_array_equal(a.values, b.values)

    def test_any_64bit_seed_accepted(self, rng):
        g = rng.standard_normal((4, 4))
        for seed in (-1, 0, 2**63, 2**64 - 1, -(2**63)):
            mvue_prune(g, rng_seed=seed)

    def test_slots_match_prune_and_compress(self, rng):
        from sparse24.spmm import compress

        g = rng.standard_normal((8, 16))
        est = mvue_prune(g, Direction.ROW_WISE, rng_seed=5)
        c = compress(est)
        values2d, pos2d = mvue_slots_rowwise(g, rng_seed=5)
        cv, cp = c._slots()
        np.testing.assert_array_equal(values2d, cv)
        np.testing.assert_array_equal(pos2d, cp)

    @given(arrays(np.float64, (6, 4), elements=st.floats(-50, 50, allow_nan=False)))
    @settings(max_examples=50, deadline=None)
    def test_inclusion_probs_are_a_distribution_of_two(self, groups):
        pi = mvue_inclusion_probs(groups)
        assert (pi >= -1e-12).all() and (pi <= 1 + 1e-12).all()
        np.testing.assert_allclose(pi.sum(axis=1), 2.0, atol=1e-9)
        probs = mvue_pair_probs(pi)
        marg = np.zeros_like(pi)
        for p, (i, j) in enumerate(MVUE_PAIRS):
            marg[:, i] += probs[:, p]
            marg[:, j] += probs[:, p]
        assert np.max(np.abs(marg - pi)) < 1e-12


class TestApplyMask:
    def test_identity_on_kept_region(self, rng):
        w = rng.standard_normal((4, 8))
        bits = np.ones((4, 8), dtype=np.uint8)
        np.testing.assert_array_equal(apply_mask(w, bits), w)

    def test_zeroes_dropped_positions(self, rng):
        w = rng.standard_normal((4, 8))
        est = prune_2of4(w)
        masked = apply_mask(w, est.mask)
        assert (masked[est.mask.bits == 0] == 0).all()

    def test_l1_equals_sum_over_kept(self, rng):
        w = rng.standard_normal((8, 8))
        mask = transposable_search_conv(w)
        masked = apply_mask(w, mask)
        assert abs(np.abs(masked).sum() - np.abs(w)[mask.bits == 1].sum()) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply_mask(np.zeros((4, 4)), Mask24(np.ones((4, 8)), Direction.ROW_WISE))


class TestMaskValidation:
    def test_mask24_rejects_wrong_group_sum(self):
        bits = np.zeros((1, 4), dtype=np.uint8)
        bits[0, 0] = 1
        with pytest.raises(FormatError):
            Mask24(bits, Direction.ROW_WISE).validate()

    def test_transposable_rejects_row_only_mask(self):
        # valid 2:4 along rows but a column holds four ones
        bits = np.zeros((4, 4), dtype=np.uint8)
        bits[:, 0] = 1
        bits[:, 1] = 1
        with pytest.raises(FormatError):
            TransposableMask(bits).validate()
