"""Decay rules, Adam, flip instrumentation, and the decay-factor search."""

import itertools

import numpy as np
import pytest

from sparse24.matrix import ShapeError
from sparse24.optim import (
    DEFAULT_LAMBDA_GRID,
    FEASIBLE_MU_BAND,
    DecayConfig,
    DecayMode,
    OptimizerState,
    adam_step,
    block_flip_stats,
    decay_factor_search,
    flip_rate,
    masked_decay_gradient,
    sgd_step,
    srste_weight_decay,
)


class TestFlipRate:
    def test_identical_masks(self):
        m = np.array([1, 1, 0, 0, 0, 0, 1, 1])
        assert flip_rate(m, m) == 0.0

    def test_one_moved_position_over_eight(self):
        before = np.array([1, 1, 0, 0, 0, 0, 1, 1])
        after = np.array([1, 0, 1, 0, 0, 0, 1, 1])
        assert flip_rate(before, after) == 0.25

    def test_symmetry(self, rng):
        a = (rng.random(16) < 0.5).astype(np.uint8)
        b = (rng.random(16) < 0.5).astype(np.uint8)
        assert flip_rate(a, b) == flip_rate(b, a)

    def test_maximal_flip_is_full_group_swap(self):
        groups = [np.array(p) for p in set(itertools.permutations([1, 1, 0, 0]))]
        rates = [flip_rate(a, b) for a in groups for b in groups]
        assert max(rates) == 1.0
        # and 1.0 needs both kept positions to move
        assert flip_rate([1, 1, 0, 0], [0, 0, 1, 1]) == 1.0

    def test_zero_iff_identical(self, rng):
        a = (rng.random(12) < 0.5).astype(np.uint8)
        b = a.copy()
        b[3] ^= 1
        assert flip_rate(a, a) == 0.0
        assert flip_rate(a, b) > 0.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            flip_rate(np.ones(4), np.ones(8))

    def test_explicit_denominator(self):
        assert flip_rate([1, 0], [0, 1], d=8) == 0.25


class TestMaskedDecayGradient:
    def test_zero_factor_is_identity(self, rng):
        g = rng.standard_normal(8)
        w = rng.standard_normal(8)
        m = (rng.random(8) < 0.5).astype(np.uint8)
        np.testing.assert_array_equal(masked_decay_gradient(g, w, m, 0.0), g)

    def test_all_ones_mask_is_identity(self, rng):
        g = rng.standard_normal(8)
        np.testing.assert_array_equal(
            masked_decay_gradient(g, rng.standard_normal(8), np.ones(8), 0.3), g
        )

    def test_arithmetic_example(self):
        got = masked_decay_gradient(
            np.zeros(4), np.array([1.0, 2.0, 3.0, 4.0]), np.array([1, 1, 0, 0]), 0.1
        )
        np.testing.assert_allclose(got, [0.0, 0.0, 0.3, 0.4])

    def test_kept_components_never_perturbed(self, rng):
        g = rng.standard_normal(16)
        w = rng.standard_normal(16)
        m = (rng.random(16) < 0.5).astype(np.uint8)
        out = masked_decay_gradient(g, w, m, 0.7)
        np.testing.assert_array_equal(out[m == 1], g[m == 1])


class TestSrsteWeightDecay:
    def test_zero_factor_identity(self, rng):
        base = rng.standard_normal(8)
        out = srste_weight_decay(base, rng.standard_normal(8), np.ones(8), 0.1, 0.0)
        np.testing.assert_array_equal(out, base)

    def test_sgd_modes_bitwise_identical_on_dyadic_system(self):
        # dyadic values make every product and sum exact, so the algebraic
        # identity between the two decay sites is bitwise observable
        w = np.array([1.0, 2.0])
        g = np.array([0.5, 0.25])
        m = np.array([1, 0])
        lr, lam = 0.25, 0.5
        on_g = OptimizerState.init(w.copy(), lr=lr)
        sgd_step(on_g, masked_decay_gradient(g, on_g.w, m, lam))
        on_w = OptimizerState.init(w.copy(), lr=lr)
        base = on_w.w - lr * g
        w_next = srste_weight_decay(base, w, m, lr, lam)
        assert on_g.w.tobytes() == w_next.tobytes()

    def test_sgd_modes_agree_on_random_values(self, rng):
        w = rng.standard_normal(32)
        g = rng.standard_normal(32)
        m = (rng.random(32) < 0.5).astype(np.uint8)
        lr, lam = 0.017, 3e-3
        on_g = OptimizerState.init(w.copy(), lr=lr)
        sgd_step(on_g, masked_decay_gradient(g, w, m, lam))
        on_w = srste_weight_decay(w - lr * g, w, m, lr, lam)
        np.testing.assert_allclose(on_g.w, on_w, rtol=1e-14, atol=1e-16)

    def test_adam_modes_diverge_with_nonuniform_second_moment(self, rng):
        w = np.array([1.0, 2.0])
        m = np.array([1, 0])
        lam = 0.05
        a = OptimizerState.init(w.copy(), lr=0.1)
        b = OptimizerState.init(w.copy(), lr=0.1)
        for _ in range(3):
            g = rng.standard_normal(2) * np.array([1.0, 30.0])
            adam_step(a, masked_decay_gradient(g, a.w, m, lam))
            before = b.w.copy()
            adam_step(b, g)
            b.w[:] = srste_weight_decay(b.w, before, m, b.lr, lam)
        assert np.max(np.abs(a.w - b.w)) > 1e-9


class TestAdam:
    def test_first_step_closed_form(self):
        g = np.array([0.25, -3.0, 1e-3])
        state = OptimizerState.init(np.array([1.0, 2.0, 3.0]), lr=0.1)
        adam_step(state, g)
        # t=1: moments debias exactly, step = lr * g / (|g| + eps)
        expect = np.array([1.0, 2.0, 3.0]) - 0.1 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(state.w, expect, rtol=1e-12)
        assert state.t == 1

    def test_zero_gradients_never_move_weights(self):
        state = OptimizerState.init(np.array([1.0, -2.0]), lr=0.5)
        for _ in range(10):
            adam_step(state, np.zeros(2))
        np.testing.assert_array_equal(state.w, [1.0, -2.0])

    def test_second_moment_history_differentiates_dimensions(self):
        state = OptimizerState.init(np.zeros(2), lr=0.1)
        adam_step(state, np.array([1.0, 100.0]))
        adam_step(state, np.array([1.0, 1.0]))
        # equal current gradients, different v history, different steps
        assert abs(state.w[0] - state.w[1]) > 1e-6

    def test_moment_recursions(self, rng):
        state = OptimizerState.init(rng.standard_normal(4), lr=0.01)
        g1, g2 = rng.standard_normal(4), rng.standard_normal(4)
        adam_step(state, g1)
        np.testing.assert_allclose(state.u, 0.1 * g1, rtol=1e-12)
        np.testing.assert_allclose(state.v, 1e-3 * g1 * g1, rtol=1e-12)
        adam_step(state, g2)
        np.testing.assert_allclose(state.u, 0.9 * 0.1 * g1 + 0.1 * g2, rtol=1e-12)


class TestBlockFlipStats:
    def test_constant_weights_no_flips(self, rng):
        w = rng.standard_normal((8, 8))
        trace = block_flip_stats([w, w, w, w])
        assert (trace.block_flips == 0).all()

    def test_gap_from_crafted_block(self):
        # best pattern keeps the eight 10s (80); the runner-up swaps two of
        # them for the 9 and the 6 (75), so the margin is exactly 5
        block = np.zeros((4, 4))
        for i, j in ((0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)):
            block[i, j] = 10.0
        block[0, 2] = 9.0
        block[2, 1] = 6.0
        trace = block_flip_stats([block, block])
        assert abs(trace.block_gaps[0] - 5.0) < 1e-9

    def test_gaps_nonnegative(self, rng):
        trace = block_flip_stats([rng.standard_normal((8, 12)) for _ in range(3)])
        assert (trace.block_gaps >= 0).all()

    def test_flips_counted_across_history(self):
        a = np.zeros((4, 4))
        a[0, 0] = a[0, 1] = a[1, 2] = a[1, 3] = 10.0
        a[2, 0] = a[2, 1] = a[3, 2] = a[3, 3] = 10.0
        b = a.T.copy()
        trace = block_flip_stats([a, b])
        assert trace.block_flips[0] > 0

    def test_requires_two_snapshots(self, rng):
        with pytest.raises(ShapeError):
            block_flip_stats([rng.standard_normal((4, 4))])


def synthetic_runner(dense_rate, sparse_rates):
    """Warmup handle with prescribed flat flip traces per candidate."""
    def runner(lam):
        if lam is None:
            return np.full(100, dense_rate)
        return np.full(100, sparse_rates[lam])
    return runner


class TestDecayFactorSearch:
    def test_mu_ratio_and_band_selection(self):
        rates = {1e-4: 1.3, 1e-3: 0.9, 1e-2: 0.7, 1e-1: 0.2}
        result = decay_factor_search(
            sorted(rates), 100, synthetic_runner(1.0, rates)
        )
        mus = {e.lambda_w: e.mu for e in result.entries}
        assert mus[1e-4] == pytest.approx(1.3)
        assert mus[1e-2] == pytest.approx(0.7)
        # both 1e-3 and 1e-2 are feasible; the larger factor wins
        assert result.chosen == 1e-2
        flags = {e.lambda_w: e.feasible for e in result.entries}
        assert flags == {1e-4: False, 1e-3: True, 1e-2: True, 1e-1: False}

    def test_risk_flag_for_mu_at_least_one(self):
        rates = {1e-4: 1.05, 1e-3: 0.8}
        result = decay_factor_search(sorted(rates), 100, synthetic_runner(1.0, rates))
        risk = {e.lambda_w: e.accuracy_risk for e in result.entries}
        assert risk == {1e-4: True, 1e-3: False}

    def test_no_feasible_candidate(self):
        rates = {1e-4: 1.4, 1e-1: 0.1}
        result = decay_factor_search(sorted(rates), 100, synthetic_runner(1.0, rates))
        assert result.chosen is None
        assert len(result.entries) == 2

    def test_mu_invariant_to_common_rescaling(self):
        rates = {1e-3: 0.8}
        r1 = decay_factor_search([1e-3], 100, synthetic_runner(1.0, rates))
        scaled = {1e-3: 0.8 * 7.5}
        r2 = decay_factor_search([1e-3], 100, synthetic_runner(7.5, scaled))
        assert r1.entries[0].mu == pytest.approx(r2.entries[0].mu, rel=1e-12)

    def test_window_is_trailing_fraction(self):
        def runner(lam):
            trace = np.zeros(100)
            trace[-10:] = 1.0 if lam is None else 0.75
            return trace

        result = decay_factor_search([1e-3], 100, runner)
        assert result.entries[0].mu == pytest.approx(0.75)
        assert result.dense_reference == pytest.approx(1.0)

    def test_csv_format(self):
        rates = {1e-3: 0.8}
        csv = decay_factor_search([1e-3], 100, synthetic_runner(1.0, rates)).to_csv()
        lines = csv.strip().splitlines()
        assert lines[0] == "lambda,mu,feasible"
        assert lines[1].startswith("0.001,")

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            decay_factor_search([], 100, synthetic_runner(1.0, {}))

    def test_default_grid_spans_published_range(self):
        assert min(DEFAULT_LAMBDA_GRID) == 1e-6
        assert max(DEFAULT_LAMBDA_GRID) == 2e-3
        assert FEASIBLE_MU_BAND == (0.60, 0.95)


class TestDecayConfig:
    def test_rejects_negative_factor(self):
        with pytest.raises(ValueError):
            DecayConfig(-1.0, DecayMode.NONE, 1)

    def test_rejects_zero_period(self):
        with pytest.raises(ValueError):
            DecayConfig(0.0, DecayMode.NONE, 0)
