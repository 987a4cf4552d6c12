"""Headless property suite behind the `verify` CLI subcommand.

Each check pairs a library operation with an independently written oracle
(brute force, finite differences, Monte Carlo, or closed-form algebra) and
raises AssertionError on disagreement.  The pytest suite runs the same
properties at acceptance scale; this registry is the quick self-check.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import erf

from .gated_ffn import (
    Activation,
    FFNLayer,
    FFNMasks,
    Traversal,
    fst_backward,
    fst_forward,
    gelu,
    gelu_grad,
    geglu_backward,
    geglu_forward,
)
from .matrix import Direction, Matrix
from .optim import (
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
from .sparsity import (
    Mask24,
    SparseEstimate,
    apply_mask,
    enumerate_patterns,
    mvue_inclusion_probs,
    mvue_pair_probs,
    mvue_prune,
    MVUE_PAIRS,
    prune_2of4,
    transposable_search_conv,
    transposable_search_greedy,
)
from .spmm import (
    LayoutQuery,
    Operand,
    PlanResult,
    compress,
    decompress,
    dense_matmul,
    layout_plan,
    spmm,
    spmm_right,
    transpose_view,
)
from .trainer import (
    TaskKind,
    TrainConfig,
    make_task,
    make_warmup_runner,
    run_training,
)


# ---------------------------------------------------------------------------
# shared independent oracles


def _independent_patterns():
    """All 4x4 blocks with row/col sums 2, enumerated from 16-bit words."""
    pats = []
    for word in range(1 << 16):
        bits = [(word >> (15 - i)) & 1 for i in range(16)]
        rows = [sum(bits[4 * r : 4 * r + 4]) for r in range(4)]
        cols = [sum(bits[c::4]) for c in range(4)]
        if rows == [2, 2, 2, 2] and cols == [2, 2, 2, 2]:
            pats.append(tuple(bits))
    pats.sort()
    return pats


def _brute_best_pattern(absblock16, patterns):
    """Per-block argmax with the kernel's accumulation and tie-break."""
    best_idx, best_score = 0, None
    for t, bits in enumerate(patterns):
        s = 0.0
        for pos in range(16):
            if bits[pos]:
                s += float(absblock16[pos])
        if best_score is None or s > best_score:
            best_idx, best_score = t, s
    return best_idx, best_score


def _block_optimum(absblock16, patterns):
    return max(
        sum(float(absblock16[p]) for p in range(16) if bits[p]) for bits in patterns
    )


def _dense_geglu(x, u, v, b, c):
    z1 = x @ u.T + b
    z2 = x @ v.T + c
    g = 0.5 * z1 * (1.0 + erf(z1 * 0.7071067811865476))
    return g * z2


def _relerr(a, f):
    a = np.asarray(a, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    scale = max(np.max(np.abs(f)), 1e-12)
    return np.max(np.abs(a - f)) / scale


# ---------------------------------------------------------------------------
# checks


def check_prune_bruteforce(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((8, 8))
    est = prune_2of4(w, Direction.ROW_WISE)
    est.mask.validate()
    groups = w.reshape(-1, 4)
    retained = np.abs(est.values).reshape(-1, 4).sum(axis=1)
    for g, kept in zip(groups, retained):
        best = max(abs(g[i]) + abs(g[j]) for i, j in itertools.combinations(range(4), 2))
        assert abs(kept - best) < 1e-12, "pruning missed the best 2-subset"
    # stated single-group examples
    one = prune_2of4(np.array([[1.0, -2.0, 3.0, 0.5]]))
    assert np.array_equal(one.values, [[0.0, -2.0, 3.0, 0.0]])
    assert np.array_equal(one.mask.bits, [[0, 1, 1, 0]])
    ties = prune_2of4(np.zeros((1, 4)))
    assert np.array_equal(ties.mask.bits, [[1, 1, 0, 0]])


def check_prune_invariances(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((8, 16))
    once = prune_2of4(w, Direction.ROW_WISE)
    twice = prune_2of4(once.values, Direction.ROW_WISE)
    assert np.array_equal(once.values, twice.values), "pruning must be idempotent"
    scaled = prune_2of4(3.5 * w, Direction.ROW_WISE)
    assert np.array_equal(once.mask.bits, scaled.mask.bits), "mask must ignore positive scaling"
    col = prune_2of4(w, Direction.COL_WISE)
    col.mask.validate()


def check_pattern_table(seed):
    table = enumerate_patterns()
    assert table.count == 90, f"expected 90 patterns, got {table.count}"
    assert (table.patterns.sum(axis=1) == 2).all()
    assert (table.patterns.sum(axis=2) == 2).all()
    flat = {tuple(p.reshape(16)) for p in table.patterns}
    for p in table.patterns:
        assert tuple(p.T.reshape(16)) in flat, "table is not closed under transpose"
    indep = _independent_patterns()
    assert [tuple(p.reshape(16)) for p in table.patterns] == indep, (
        "canonical order differs from independent enumeration"
    )
    known = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]])
    table.index_of(known)


def check_conv_search_bruteforce(seed):
    rng = np.random.default_rng(seed)
    patterns = _independent_patterns()
    table = enumerate_patterns()
    for _ in range(25):
        w = rng.standard_normal((16, 16))
        mask = transposable_search_conv(w)
        mask.validate()
        absb = np.abs(w.reshape(4, 4, 4, 4).transpose(0, 2, 1, 3).reshape(-1, 16))
        for bi in range(absb.shape[0]):
            idx, _ = _brute_best_pattern(absb[bi], patterns)
            got = mask.bits.reshape(4, 4, 4, 4).transpose(0, 2, 1, 3).reshape(-1, 16)[bi]
            assert tuple(got) == patterns[idx], "conv search differs from brute force"
        assert np.array_equal(mask.transpose().bits, transposable_search_conv(w).bits.T)
    del table


def check_search_bound_chain(seed):
    rng = np.random.default_rng(seed)
    patterns = _independent_patterns()
    blocks = [rng.standard_normal((4, 4)) for _ in range(150)]
    blocks += [np.ones((4, 4)), np.zeros((4, 4))]
    # family that strands the greedy scan at seven picks
    stuck = np.array(
        [[10.0, 10.0, 0.1, 0.2], [10.0, 10.0, 0.1, 0.2], [0.3, 0.3, 9.0, 0.1], [0.3, 0.3, 9.5, 9.9]]
    )
    blocks.append(stuck)
    blocks += [rng.integers(0, 3, size=(4, 4)).astype(float) for _ in range(150)]
    for w in blocks:
        conv = transposable_search_conv(w)
        greedy = transposable_search_greedy(w)
        conv.validate()
        greedy.validate()
        opt = _block_optimum(np.abs(w).reshape(16), patterns)
        r_conv = conv.retained_l1(w)
        r_greedy = greedy.retained_l1(w)
        assert r_conv >= r_greedy - 1e-9, "exhaustive search fell below greedy"
        assert r_greedy >= 0.5 * opt - 1e-9, "greedy broke the 2-approximation bound"
        assert abs(r_conv - opt) < 1e-9, "exhaustive search is not optimal"


def check_mvue_marginals(seed):
    rng = np.random.default_rng(seed)
    groups = rng.standard_normal((2000, 4))
    groups[rng.random(2000) < 0.2, 1] = 0.0
    groups[rng.random(2000) < 0.1, 2:] = 0.0
    groups[:5] = 0.0
    pi = mvue_inclusion_probs(groups)
    assert np.allclose(pi.sum(axis=1), 2.0, atol=1e-9)
    assert (pi >= -1e-15).all() and (pi <= 1 + 1e-12).all()
    probs = mvue_pair_probs(pi)
    assert (probs >= 0).all()
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    marg = np.zeros_like(pi)
    for p, (i, j) in enumerate(MVUE_PAIRS):
        marg[:, i] += probs[:, p]
        marg[:, j] += probs[:, p]
    assert np.max(np.abs(marg - pi)) < 1e-12, "pair marginals do not reproduce pi"
    # stated examples
    pi_u = mvue_inclusion_probs(np.array([[1.0, 1.0, 1.0, 1.0]]))
    assert np.allclose(pi_u, 0.5)
    pi_d = mvue_inclusion_probs(np.array([[5.0, 0.0, 0.0, 0.0]]))
    assert np.allclose(pi_d, [[1.0, 1 / 3, 1 / 3, 1 / 3]])


def check_mvue_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(4)
    n = 200_000
    tiled = np.tile(x, (n, 1))
    est = mvue_prune(tiled, Direction.ROW_WISE, rng_seed=seed)
    vals = est.values
    mean = vals.mean(axis=0)
    se = vals.std(axis=0) / math.sqrt(n)
    # entries clamped to certain inclusion have zero variance; leave them a
    # small absolute allowance for the mean's own summation rounding
    bound = 4 * se + 1e-9 * np.maximum(1.0, np.abs(x))
    assert (np.abs(mean - x) <= bound).all(), "Monte Carlo mean drifted"
    est.mask.validate()
    dom = mvue_prune(np.array([[5.0, 0.0, 0.0, 0.0]]), rng_seed=seed)
    assert dom.values[0, 0] == 5.0, "clamped entry must be kept unscaled"


def check_apply_mask(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((8, 8))
    est = prune_2of4(w)
    masked = apply_mask(w, est.mask)
    assert np.abs(masked).sum() == np.abs(w[est.mask.bits == 1]).sum()
    assert (masked[est.mask.bits == 0] == 0).all()


def check_compress_roundtrip(seed):
    rng = np.random.default_rng(seed)
    for direction in (Direction.ROW_WISE, Direction.COL_WISE):
        w = rng.standard_normal((8, 12) if direction is Direction.ROW_WISE else (12, 8))
        est = prune_2of4(w, direction)
        c = compress(est)
        dec = decompress(c)
        assert np.array_equal(dec.to_array(), est.values)
        again = compress(SparseEstimate(dec.to_array(), est.mask))
        assert np.array_equal(again.values, c.values)
        assert np.array_equal(again.meta, c.meta)
    g = compress(prune_2of4(np.array([[0.0, 5.0, 0.0, -3.0]])))
    assert list(g.values) == [5.0, -3.0] and g.meta[0] == (1 | (3 << 2))


def check_spmm_bitwise(seed):
    rng = np.random.default_rng(seed)
    for _ in range(30):
        m = 4 * int(rng.integers(1, 6))
        k = 4 * int(rng.integers(1, 6))
        n = int(rng.integers(1, 17))
        a = compress(prune_2of4(rng.standard_normal((m, k)), Direction.ROW_WISE))
        b = rng.standard_normal((k, n))
        got = spmm(a, b)
        ref = dense_matmul(decompress(a), b)
        assert got.data.tobytes() == ref.data.tobytes(), "sparse multiply is not bit-exact"
        x = rng.standard_normal((n, k))
        bt = transpose_view(a)  # column-wise view, shape (k, m)
        got2 = spmm_right(x, bt)
        ref2 = dense_matmul(x, decompress(bt))
        assert np.array_equal(got2.to_array(), ref2.to_array())
        assert got2.data.ravel(order="F").tobytes() == ref2.data.ravel(order="F").tobytes()
        assert got2.layout.value == "col_major"


def check_layout_plan(seed):
    expect = {
        ("S", "R"): PlanResult.OUT_ROW_MAJOR,
        ("S", "C"): PlanResult.OUT_ROW_MAJOR,
        ("R", "ST"): PlanResult.OUT_COL_MAJOR,
        ("C", "ST"): PlanResult.OUT_COL_MAJOR,
        ("R", "R"): PlanResult.OUT_ROW_MAJOR,
        ("R", "C"): PlanResult.OUT_ROW_MAJOR,
        ("C", "R"): PlanResult.OUT_ROW_MAJOR,
        ("C", "C"): PlanResult.OUT_ROW_MAJOR,
    }
    for left in Operand:
        for right in Operand:
            want = expect.get((left.value, right.value), PlanResult.INCOMPATIBLE)
            got = layout_plan(LayoutQuery(left, right))
            assert got is want, f"plan({left}, {right}) = {got}, want {want}"


def check_gelu(seed):
    assert gelu(0.0) == 0.0
    assert abs(gelu(-10.0)) < 1e-9
    assert abs(gelu(30.0) - 30.0) < 1e-9
    h = 1e-6
    for x in (-2.0, -1.0, 0.5, 3.0):
        fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
        assert abs(gelu_grad(x) - fd) / max(abs(fd), 1e-12) < 1e-7


def check_geglu_forward(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((8, 16))
    u, v = rng.standard_normal((12, 16)), rng.standard_normal((12, 16))
    b, c = rng.standard_normal(12), rng.standard_normal(12)
    by_col = geglu_forward(x, u, v, b, c, Traversal.COL_ORDER)
    by_row = geglu_forward(x, u, v, b, c, Traversal.ROW_ORDER)
    assert by_col.data.tobytes() == by_row.data.tobytes(), "traversal changed values"
    ref = _dense_geglu(x, u, v, b, c)
    assert np.max(np.abs(by_col.to_array() - ref)) < 1e-12
    ones_gate = geglu_forward(x, u, np.zeros_like(v), b, np.ones(12))
    z1 = x @ u.T + b
    assert np.max(np.abs(ones_gate.to_array() - gelu(z1))) < 1e-12


def check_geglu_backward(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((4, 8))
    u, v = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    b, c = rng.standard_normal(8), rng.standard_normal(8)
    up = rng.standard_normal((4, 8))
    grads = geglu_backward(x, u, v, b, c, up)
    zero = geglu_backward(x, u, v, b, c, np.zeros_like(up))
    for gz in (zero.d_x, zero.d_u, zero.d_v, zero.d_b, zero.d_c):
        assert (gz == 0).all()
    h = 1e-6

    def loss(xx, uu, vv, bb, cc):
        return float((_dense_geglu(xx, uu, vv, bb, cc) * up).sum())

    for arr, grad in ((x, grads.d_x), (u, grads.d_u), (v, grads.d_v),
                      (b, grads.d_b), (c, grads.d_c)):
        fd = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            hi = loss(x, u, v, b, c)
            arr[idx] = orig - h
            lo = loss(x, u, v, b, c)
            arr[idx] = orig
            fd[idx] = (hi - lo) / (2 * h)
        assert _relerr(grad, fd) < 1e-5, "analytic gradient disagrees with differences"


def _toy_layer(rng, d=8, d_ff=8):
    u = rng.standard_normal((d_ff, d))
    v = rng.standard_normal((d_ff, d))
    b, c = rng.standard_normal(d_ff), rng.standard_normal(d_ff)
    w2 = rng.standard_normal((d, d_ff))
    layer = FFNLayer.gated(u=u, v=v, b=b, c=c, w2=w2)
    masks = FFNMasks(
        w_in=transposable_search_conv(layer.w_in()),
        w_out=transposable_search_conv(w2),
    )
    return layer, masks


def _dense_forward_of_masked(layer, masks, x):
    w_in = layer.w_in() * (masks.w_in.bits if masks else 1)
    w2 = layer.w2 * (masks.w_out.bits if masks else 1)
    z = x @ w_in.T + layer.bias_in()
    r = layer.d_ff
    a = _dense_geglu_from_z(z, r)
    return a @ w2.T


def _dense_geglu_from_z(z, r):
    z1, z2 = z[:, :r], z[:, r:]
    return (0.5 * z1 * (1.0 + erf(z1 * 0.7071067811865476))) * z2


def check_fst_forward(seed):
    rng = np.random.default_rng(seed)
    layer, masks = _toy_layer(rng)
    x = rng.standard_normal((4, 8))
    out = fst_forward(layer, x, masks)
    ref = _dense_forward_of_masked(layer, masks, x)
    assert np.max(np.abs(out.y - ref)) < 1e-12, "sparse route differs from masked dense"
    dense = fst_forward(layer, x, None)
    ref_dense = _dense_forward_of_masked(layer, None, x)
    assert np.max(np.abs(dense.y - ref_dense)) < 1e-12, "mask-free path is not the plain layer"
    zero = fst_forward(layer, np.zeros_like(x), masks)
    bias_only = _dense_forward_of_masked(layer, masks, np.zeros_like(x))
    assert np.max(np.abs(zero.y - bias_only)) < 1e-12
    again = fst_forward(layer, x, masks)
    assert np.array_equal(out.y, again.y), "same masks must reproduce the same output"


def check_fst_backward_ste(seed):
    rng = np.random.default_rng(seed)
    layer, masks = _toy_layer(rng)
    x = rng.standard_normal((4, 8))
    up = rng.standard_normal((4, 8))
    bundle = fst_forward(layer, x, masks)
    grads = fst_backward(bundle, up, rng_seed=0, mvue=False)
    # independent manual backprop through the masked dense layer
    w_in = layer.w_in() * masks.w_in.bits
    w2 = layer.w2 * masks.w_out.bits
    z = x @ w_in.T + layer.bias_in()
    r = layer.d_ff
    z1, z2 = z[:, :r], z[:, r:]
    a = _dense_geglu_from_z(z, r)
    da = up @ w2
    phi = 0.5 * (1.0 + erf(z1 * 0.7071067811865476))
    pdf = np.exp(-0.5 * z1 * z1) * 0.3989422804014327
    g1 = da * z2 * (phi + z1 * pdf)
    g2 = da * (z1 * phi)
    dz = np.concatenate([g1, g2], axis=1)
    assert _relerr(grads.d_w2, up.T @ a) < 1e-9
    assert _relerr(np.concatenate([grads.d_u, grads.d_v]), dz.T @ x) < 1e-9
    assert _relerr(grads.d_x, dz @ w_in) < 1e-9
    zero = fst_backward(bundle, np.zeros_like(up), rng_seed=0, mvue=False)
    for gz in (zero.d_x, zero.d_u, zero.d_v, zero.d_b, zero.d_c, zero.d_w2):
        assert (gz == 0).all()


def check_fst_gradcheck(seed):
    rng = np.random.default_rng(seed)
    layer, masks = _toy_layer(rng)
    x = rng.standard_normal((4, 8))
    up = rng.standard_normal((4, 8))
    bundle = fst_forward(layer, x, masks)
    grads = fst_backward(bundle, up, mvue=False)
    h = 1e-6

    def loss():
        return float((fst_forward(layer, x, masks).y * up).sum())

    for arr, grad, bits in (
        (layer.u, grads.d_u, masks.w_in.bits[: layer.d_ff]),
        (layer.v, grads.d_v, masks.w_in.bits[layer.d_ff :]),
        (layer.w2, grads.d_w2, masks.w_out.bits),
        (layer.b, grads.d_b, None),
        (layer.c, grads.d_c, None),
    ):
        fd = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if bits is not None and bits[idx] == 0:
                continue  # pruned entries: straight-through, no dense response
            orig = arr[idx]
            arr[idx] = orig + h
            hi = loss()
            arr[idx] = orig - h
            lo = loss()
            arr[idx] = orig
            fd[idx] = (hi - lo) / (2 * h)
        keep = np.ones_like(arr) if bits is None else bits
        assert _relerr(grad * keep, fd) < 1e-5, "layer gradient failed the difference check"


def check_mvue_weight_grad(seed):
    rng = np.random.default_rng(seed)
    layer, masks = _toy_layer(rng, d=4, d_ff=4)
    x = rng.standard_normal((4, 4))
    up = rng.standard_normal((4, 4))
    bundle = fst_forward(layer, x, masks)
    exact = fst_backward(bundle, up, mvue=False)
    n = 8000
    acc = np.zeros_like(exact.d_w2)
    sq = np.zeros_like(exact.d_w2)
    for s in range(n):
        g = fst_backward(bundle, up, rng_seed=s, mvue=True).d_w2
        acc += g
        sq += g * g
    mean = acc / n
    var = np.maximum(sq / n - mean**2, 0.0)
    se = np.sqrt(var / n)
    assert (np.abs(mean - exact.d_w2) <= 4 * se + 1e-9).all(), "MVUE weight grad is biased"


def check_adam(seed):
    g = np.array([0.25, -3.0])
    state = OptimizerState.init(np.array([1.0, 2.0]), lr=0.1)
    adam_step(state, g)
    expect = np.array([1.0, 2.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.max(np.abs(state.w - expect)) < 1e-12, "first Adam step closed form failed"
    s2 = OptimizerState.init(np.zeros(2), lr=0.1)
    adam_step(s2, np.array([1.0, 100.0]))
    adam_step(s2, np.array([1.0, 1.0]))
    assert abs(s2.w[0] - s2.w[1]) > 1e-6, "second-moment history must differentiate dims"
    s3 = OptimizerState.init(np.zeros(2), lr=0.1)
    for _ in range(5):
        adam_step(s3, np.zeros(2))
    assert (s3.w == 0).all()


def check_decay_modes(seed):
    w = np.array([1.0, 2.0])
    m = np.array([1, 0])
    g = np.array([0.5, 0.25])
    lr, lam = 0.25, 0.5  # dyadic so both orderings are exact
    on_g = OptimizerState.init(w.copy(), lr=lr)
    sgd_step(on_g, masked_decay_gradient(g, on_g.w, m, lam))
    on_w = OptimizerState.init(w.copy(), lr=lr)
    base = on_w.w - lr * g
    w_next = srste_weight_decay(base, on_w.w, m, lr, lam)
    assert on_g.w.tobytes() == w_next.tobytes(), "decay modes must agree under SGD"
    assert (masked_decay_gradient(g, w, np.ones(2), lam) == g).all()
    assert (masked_decay_gradient(g, w, m, 0.0) == g).all()
    got = masked_decay_gradient(np.zeros(4), np.array([1.0, 2, 3, 4]), np.array([1, 1, 0, 0]), 0.1)
    assert np.allclose(got, [0, 0, 0.3, 0.4])
    # Adam with nonuniform second moments: the two modes diverge
    adam_g = OptimizerState.init(w.copy(), lr=lr)
    adam_w = OptimizerState.init(w.copy(), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        gg = rng.standard_normal(2) * np.array([1.0, 10.0])
        adam_step(adam_g, masked_decay_gradient(gg, adam_g.w, m, lam))
        before = adam_w.w.copy()
        adam_step(adam_w, gg)
        adam_w.w[:] = srste_weight_decay(adam_w.w, before, m, adam_w.lr, lam)
    assert np.max(np.abs(adam_g.w - adam_w.w)) > 1e-9, "modes should differ under Adam"


def check_flip_rate(seed):
    a = np.array([1, 1, 0, 0, 0, 1, 1, 0])
    assert flip_rate(a, a) == 0.0
    b = np.array([1, 0, 1, 0, 0, 1, 1, 0])
    assert flip_rate(a, b) == 0.25
    assert flip_rate(b, a) == flip_rate(a, b)
    # maximal flip over all pairs of valid groups is 1.0 (full swap)
    pairs = [np.array(p) for p in itertools.permutations([1, 1, 0, 0]) ]
    best = max(flip_rate(x, y) for x in pairs for y in pairs)
    assert best == 1.0


def check_block_stats(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((8, 8))
    trace = block_flip_stats([w, w, w])
    assert (trace.block_flips == 0).all()
    assert (trace.block_gaps >= 0).all()
    block = np.zeros((4, 4))
    block[0, 0] = block[0, 1] = block[1, 0] = block[1, 1] = 10.0
    block[2, 2] = block[2, 3] = block[3, 2] = block[3, 3] = 10.0
    # the runner-up pattern trades two 10s for the 9 and the 6: gap 5
    block[0, 2] = 9.0
    block[2, 1] = 6.0
    t2 = block_flip_stats([block, block])
    assert abs(t2.block_gaps[0] - 5.0) < 1e-9


def check_tasks(seed):
    t1 = make_task(TaskKind.TEACHER_STUDENT_REGRESSION, seed, d=16, batch=8, d_ff=32, depth=1)
    t2 = make_task(TaskKind.TEACHER_STUDENT_REGRESSION, seed, d=16, batch=8, d_ff=32, depth=1)
    x1, y1 = t1.next_batch()
    x2, y2 = t2.next_batch()
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert t1.loss(y1, y1) == 0.0  # realizable targets
    tc = make_task(TaskKind.SYNTHETIC_CLASSIFICATION, seed, d=16, batch=100_000, d_ff=32)
    _, labels = tc.next_batch()
    frac = np.bincount(labels, minlength=4) / len(labels)
    assert np.max(np.abs(frac - 0.25)) < 0.01


def check_trainer_determinism(seed):
    cfg = TrainConfig(d=8, d_ff=16, depth=1, batch=8, steps=30, seed=seed,
                      decay=DecayConfig(1e-4, DecayMode.ON_GRADIENTS, 5),
                      dense_ft_fraction=0.2, eval_batches=2)
    a = run_training(cfg)
    b = run_training(cfg)
    assert a.losses.tobytes() == b.losses.tobytes(), "same seed must be bit-reproducible"
    assert a.final_eval_loss == b.final_eval_loss
    assert len(a.losses) == cfg.steps and len(a.flips) == cfg.steps


def check_refresh_counts(seed):
    def run(period):
        return run_training(
            TrainConfig(d=8, d_ff=16, depth=1, batch=8, steps=40, seed=seed,
                        dense_ft_fraction=0.0, eval_batches=1,
                        decay=DecayConfig(0.0, DecayMode.NONE, period))
        )

    assert run(40).mask_search_calls < run(1).mask_search_calls


def check_dense_proxy_shape(seed):
    cfg = TrainConfig(d=16, d_ff=32, depth=1, batch=8, steps=600, seed=seed,
                      sparse=False, proxy_flips=True, dense_ft_fraction=0.0,
                      warmup_fraction=0.1, eval_batches=1)
    art = run_training(cfg)
    first_half_max = art.flips[: cfg.steps // 2].max()
    tail_mean = art.flips[-cfg.steps // 10 :].mean()
    assert first_half_max > tail_mean, "proxy flip trace should rise then fade"


def check_decay_search(seed):
    base = TrainConfig(d=16, d_ff=32, depth=1, batch=8, steps=600, seed=seed,
                       dense_ft_fraction=0.0, eval_batches=1)
    runner = make_warmup_runner(base, warmup_steps=120)
    result = decay_factor_search([1e-4, 10.0], 120, runner)
    result2 = decay_factor_search([1e-4, 10.0], 120, runner)
    assert [e.mu for e in result.entries] == [e.mu for e in result2.entries]
    big = result.entries[1]
    assert big.mu < 0.6 and not big.feasible, "a huge decay factor must freeze masks"
    assert result.to_csv().startswith("lambda,mu,feasible")


CHECKS = [
    ("prune_bruteforce", check_prune_bruteforce),
    ("prune_invariances", check_prune_invariances),
    ("pattern_table", check_pattern_table),
    ("conv_search_bruteforce", check_conv_search_bruteforce),
    ("search_bound_chain", check_search_bound_chain),
    ("mvue_marginals", check_mvue_marginals),
    ("mvue_monte_carlo", check_mvue_monte_carlo),
    ("apply_mask", check_apply_mask),
    ("compress_roundtrip", check_compress_roundtrip),
    ("spmm_bitwise", check_spmm_bitwise),
    ("layout_plan", check_layout_plan),
    ("gelu", check_gelu),
    ("geglu_forward", check_geglu_forward),
    ("geglu_backward", check_geglu_backward),
    ("fst_forward", check_fst_forward),
    ("fst_backward_ste", check_fst_backward_ste),
    ("fst_gradcheck", check_fst_gradcheck),
    ("mvue_weight_grad", check_mvue_weight_grad),
    ("adam", check_adam),
    ("decay_modes", check_decay_modes),
    ("flip_rate", check_flip_rate),
    ("block_stats", check_block_stats),
    ("tasks", check_tasks),
    ("trainer_determinism", check_trainer_determinism),
    ("refresh_counts", check_refresh_counts),
    ("dense_proxy_shape", check_dense_proxy_shape),
    ("decay_search", check_decay_search),
]


def run_all(seed: int = 0, out=print) -> int:
    """Run every check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn(seed)
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures += 1
            out(f"FAIL {name}: {exc}")
        else:
            out(f"PASS {name}")
    return failures
