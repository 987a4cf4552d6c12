"""Update rules for sparse training: straight-through with optional decay
on pruned weights (applied to gradients or to weights), Adam, flip-rate
instrumentation, per-block dilemma statistics, and the warmup grid search
for the decay factor."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .matrix import ShapeError
from .sparsity import PatternTable, enumerate_patterns, transposable_search_conv, _blocks_16
from .backend import kernels

__all__ = [
    "OptimizerState",
    "DecayMode",
    "DecayConfig",
    "FlipTrace",
    "flip_rate",
    "masked_decay_gradient",
    "srste_weight_decay",
    "adam_step",
    "sgd_step",
    "block_flip_stats",
    "decay_factor_search",
    "SearchEntry",
    "SearchResult",
    "FEASIBLE_MU_BAND",
    "DEFAULT_LAMBDA_GRID",
]

# Flip-rate ratio band (sparse/dense at the sampling point) considered
# healthy; ratios >= 1 signal unstable mask churn and accuracy risk.
FEASIBLE_MU_BAND = (0.60, 0.95)

# Default candidate grid: the decay factors reported effective across
# transformer-family models, spanning three orders of magnitude.
DEFAULT_LAMBDA_GRID = (1e-6, 2e-6, 6e-6, 2e-5, 6e-5, 2e-4, 6e-4, 2e-3)


class DecayMode(Enum):
    NONE = "none"  # plain straight-through
    ON_WEIGHTS = "on_weights"  # decay subtracted at the update site
    ON_GRADIENTS = "on_gradients"  # decay folded into the gradient


@dataclass
class DecayConfig:
    lambda_w: float = 0.0
    mode: DecayMode = DecayMode.NONE
    refresh_period: int = 40  # optimizer steps between mask recomputations

    def __post_init__(self) -> None:
        if self.lambda_w < 0:
            raise ValueError("lambda_w must be nonnegative")
        if self.refresh_period < 1:
            raise ValueError("refresh_period must be >= 1")


@dataclass
class OptimizerState:
    """Adam state over a flat parameter vector."""

    w: np.ndarray
    u: np.ndarray  # first moment
    v: np.ndarray  # second moment
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, w: np.ndarray, lr: float = 1e-3, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        w = np.asarray(w, dtype=np.float64)
        return cls(w=w, u=np.zeros_like(w), v=np.zeros_like(w),
                   t=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


@dataclass
class FlipTrace:
    """Per-step flip rates plus per-block oscillation statistics."""

    rates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    block_flips: np.ndarray | None = None  # cumulative flips per 4x4 block
    block_gaps: np.ndarray | None = None  # retained-L1 gap best vs. second best


def flip_rate(m_prev, m_curr, d: int | None = None) -> float:
    """Fraction of mask bits that changed: ||m_curr - m_prev||_1 / d."""
    a = np.asarray(m_prev).ravel()
    b = np.asarray(m_curr).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"mask lengths differ: {a.size} vs {b.size}")
    if d is None:
        d = a.size
    return float(np.abs(b.astype(np.int64) - a.astype(np.int64)).sum()) / d


def masked_decay_gradient(g, w, m, lambda_w: float) -> np.ndarray:
    """g + lambda_w * (~m) . w: pruned weights get pulled toward zero
    through the gradient (and hence through the optimizer's normalizer);
    kept weights are untouched."""
    g = np.asarray(g, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m = np.asarray(m)
    if not (g.shape == w.shape == m.shape):
        raise ShapeError("gradient, weights and mask must have equal shapes")
    return g + lambda_w * ((1 - m) * w)


def srste_weight_decay(w_next_base, w, m, lr: float, lambda_w: float) -> np.ndarray:
    """Decay applied at the update site: subtracts lr * lambda_w * (~m) . w
    from the post-gradient weights, bypassing any gradient normalizer."""
    w_next_base = np.asarray(w_next_base, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m = np.asarray(m)
    if not (w_next_base.shape == w.shape == m.shape):
        raise ShapeError("weights and mask must have equal shapes")
    return w_next_base - lr * lambda_w * ((1 - m) * w)


def adam_step(state: OptimizerState, g) -> OptimizerState:
    """One Adam update (in place):

        u_t = b1*u + (1-b1)*g        v_t = b2*v + (1-b2)*g^2
        w  -= lr * u_t / ((1 - b1^t) * (sqrt(v_t / (1 - b2^t)) + eps))
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.w.shape:
        raise ShapeError("gradient shape differs from weights")
    state.t += 1
    t = state.t
    state.u *= state.beta1
    state.u += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    denom = np.sqrt(state.v / (1.0 - state.beta2**t))
    denom += state.eps
    denom *= 1.0 - state.beta1**t
    state.w -= state.lr * state.u / denom
    return state


def sgd_step(state: OptimizerState, g) -> OptimizerState:
    """Plain gradient descent step (used to contrast the decay modes)."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != state.w.shape:
        raise ShapeError("gradient shape differs from weights")
    state.t += 1
    state.w -= state.lr * g
    return state


# ---------------------------------------------------------------------------
# per-block dilemma statistics


def block_flip_stats(
    w_history: Sequence[np.ndarray],
    table: PatternTable | None = None,
    mask_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> FlipTrace:
    """Cumulative mask flips and retained-L1 gap per 4x4 block.

    The gap g_i is the margin between the best and second-best pattern on
    the final snapshot; blocks that oscillate (high flips) at a small gap
    are the dilemma points.
    """
    snaps = [np.asarray(w, dtype=np.float64) for w in w_history]
    if len(snaps) < 2:
        raise ShapeError("need at least two weight snapshots")
    if table is None:
        table = enumerate_patterns()
    if mask_fn is None:
        mask_fn = lambda w: transposable_search_conv(w, table).bits  # noqa: E731

    masks = [_blocks_16(mask_fn(w)).astype(np.int64) for w in snaps]
    flips = np.zeros(masks[0].shape[0], dtype=np.int64)
    for prev, curr in zip(masks, masks[1:]):
        flips += np.abs(curr - prev).sum(axis=1)

    absblocks = np.abs(_blocks_16(snaps[-1]))
    scores, _ = kernels.pattern_scores(absblocks, table.positions)
    top2 = -np.partition(-scores, 1, axis=1)[:, :2]
    gaps = top2[:, 0] - top2[:, 1]
    return FlipTrace(rates=np.zeros(0), block_flips=flips, block_gaps=gaps)


# ---------------------------------------------------------------------------
# decay factor determination


@dataclass
class SearchEntry:
    lambda_w: float
    mu: float
    feasible: bool
    accuracy_risk: bool  # mu >= 1: flips not inhibited below the dense rate


@dataclass
class SearchResult:
    chosen: float | None
    entries: list[SearchEntry]
    dense_reference: float  # mean dense-proxy flip rate over the window

    def to_csv(self) -> str:
        lines = ["lambda,mu,feasible"]
        for e in self.entries:
            lines.append(f"{e.lambda_w:g},{e.mu:.6g},{str(e.feasible).lower()}")
        return "\n".join(lines) + "\n"


def decay_factor_search(
    candidates: Sequence[float],
    warmup_steps: int,
    run_warmup: Callable[[float | None], np.ndarray],
    window_fraction: float = 0.10,
) -> SearchResult:
    """Grid-search the decay factor on a short warmup.

    run_warmup(None) must produce the dense run's per-step proxy flip
    rates; run_warmup(lam) the sparse run's.  mu is the ratio of mean flip
    rates over the trailing `window_fraction` of the warmup.  The largest
    candidate inside FEASIBLE_MU_BAND wins; if none is feasible the result
    carries chosen=None and the full report.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    if warmup_steps < 1:
        raise ValueError("warmup_steps must be >= 1")
    window = max(1, int(round(window_fraction * warmup_steps)))

    dense_trace = np.asarray(run_warmup(None), dtype=np.float64)
    dense_ref = float(dense_trace[-window:].mean())

    entries = []
    lo, hi = FEASIBLE_MU_BAND
    for lam in candidates:
        trace = np.asarray(run_warmup(float(lam)), dtype=np.float64)
        sparse_rate = float(trace[-window:].mean())
        mu = sparse_rate / dense_ref if dense_ref > 0 else np.inf
        entries.append(
            SearchEntry(
                lambda_w=float(lam),
                mu=mu,
                feasible=bool(lo <= mu <= hi),
                accuracy_risk=bool(mu >= 1.0),
            )
        )
    feasible = [e.lambda_w for e in entries if e.feasible]
    chosen = max(feasible) if feasible else None
    return SearchResult(chosen=chosen, entries=entries, dense_reference=dense_ref)
