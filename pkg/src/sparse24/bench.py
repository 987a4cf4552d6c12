"""Microbenchmarks: dense vs simulated-sparse multiply, gate-stage
traversal order, and the two transposable mask searches.

All numbers are informational (ratios, never asserted): timings are
machine-specific.  FLOP counts are analytic; the sparse multiply skips
half the contraction terms.
"""

from __future__ import annotations

import time

import numpy as np

from . import backend
from .matrix import Direction
from .sparsity import prune_2of4, transposable_search_conv, transposable_search_greedy
from .spmm import compress, decompress, dense_matmul_flops, sparse_matmul_flops

__all__ = [
    "BENCH_WEIGHT_SHAPES",
    "BENCH_GATE_WIDTHS",
    "bench_spmm",
    "bench_geglu",
    "bench_masksearch",
    "rows_to_csv",
]

# Typical transformer FFN weight shapes (rows x cols), small to large.
BENCH_WEIGHT_SHAPES = (
    (3072, 768),
    (4096, 1024),
    (5120, 1280),
    (1024, 1600),
    (8192, 2048),
)

# Gate-stage widths with a 32x512 flattened batch/sequence leading dim.
BENCH_GATE_WIDTHS = (768, 1024, 1280, 1600, 2048)
_GATE_LEAD = 32 * 512


def _dtype(precision: str):
    if precision == "f32":
        return np.float32
    if precision == "f64":
        return np.float64
    raise ValueError(f"precision must be f32 or f64, got {precision!r}")


def _available_backends():
    found = {}
    try:
        from . import _core

        found[_core.BACKEND_NAME] = _core
    except ImportError:
        pass
    from . import _core_py

    found.setdefault(_core_py.BACKEND_NAME, _core_py)
    return found


def _best_ns(fn, repeats: int) -> int:
    best = None
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        dt = time.perf_counter_ns() - t0
        best = dt if best is None else min(best, dt)
    return best


def bench_spmm(shapes=BENCH_WEIGHT_SHAPES, n: int = 64, precision: str = "f64",
               repeats: int = 2, compare_backends: bool = True) -> list[dict]:
    """Dense vs simulated-sparse multiply on 2:4-pruned left operands."""
    dtype = _dtype(precision)
    backends = _available_backends() if compare_backends else {backend.BACKEND: backend.kernels}
    rows = []
    rng = np.random.default_rng(0)
    for m, k in shapes:
        dense = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n)).astype(dtype)
        c = compress(prune_2of4(dense, Direction.ROW_WISE))
        values2d, pos2d = c._slots()
        vals = np.ascontiguousarray(values2d, dtype=dtype)
        pos = np.ascontiguousarray(pos2d)
        dec = decompress(c).data.astype(dtype)
        for name, K in backends.items():
            dense_ns = _best_ns(lambda: K.matmul_ref(dec, b), repeats)
            sparse_ns = _best_ns(lambda: K.spmm_rowwise(vals, pos, b), repeats)
            rows.append(
                {
                    "backend": name,
                    "shape": f"{m}x{k}",
                    "m": m,
                    "k": k,
                    "n": n,
                    "dense_ns": dense_ns,
                    "sparse_ns": sparse_ns,
                    "dense_flops": dense_matmul_flops(m, k, n),
                    "sparse_flops": sparse_matmul_flops(m, k, n),
                    "speedup": dense_ns / sparse_ns,
                }
            )
    return rows


def bench_geglu(widths=BENCH_GATE_WIDTHS, lead: int = _GATE_LEAD,
                precision: str = "f64", repeats: int = 2) -> list[dict]:
    """Row-order vs column-order gate traversal on column-major operands.

    Outputs of the two traversals are checked equal before any timing.
    """
    dtype = _dtype(precision)
    K = backend.kernels
    rows = []
    rng = np.random.default_rng(0)
    for r in widths:
        z1 = np.asfortranarray(rng.standard_normal((lead, r)).astype(dtype))
        z2 = np.asfortranarray(rng.standard_normal((lead, r)).astype(dtype))
        by_row = K.gate_gelu(z1, z2, True)
        by_col = K.gate_gelu(z1, z2, False)
        if not np.array_equal(by_row, by_col):
            raise AssertionError("traversal orders disagree; refusing to time")
        row_ns = _best_ns(lambda: K.gate_gelu(z1, z2, True), repeats)
        col_ns = _best_ns(lambda: K.gate_gelu(z1, z2, False), repeats)
        rows.append(
            {
                "shape": f"32x512x{r}",
                "row_ns": row_ns,
                "col_ns": col_ns,
                "ratio": row_ns / col_ns,
            }
        )
    return rows


def bench_masksearch(shapes=BENCH_WEIGHT_SHAPES, repeats: int = 2) -> list[dict]:
    """Exhaustive pattern-scoring search vs greedy 2-approximation."""
    rows = []
    rng = np.random.default_rng(0)
    for m, k in shapes:
        w = rng.standard_normal((m, k))
        conv_ns = _best_ns(lambda: transposable_search_conv(w), repeats)
        greedy_ns = _best_ns(lambda: transposable_search_greedy(w), repeats)
        rows.append(
            {
                "shape": f"{m}x{k}",
                "conv_ns": conv_ns,
                "greedy_ns": greedy_ns,
                "ratio": greedy_ns / conv_ns,
            }
        )
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        vals = []
        for c in cols:
            v = row[c]
            vals.append(f"{v:.6g}" if isinstance(v, float) else str(v))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
