"""Gated activations and the fully sparse forward/backward of a
feed-forward layer, with manual (testable) gradients.

The sparse layer prunes weight matrices with transposable masks so the
forward product and the input-gradient product share one pruned weight,
and sparsifies the output-activation gradient stochastically (unbiased)
for the weight-gradient product.  Biases are never sparsified.  The
pruning step is treated as constant during differentiation, so weight
gradients pass straight through the mask to the dense weights.

Because a mask is fixed for many steps while weight values change every
step, each mask is turned once into a gather plan (kept positions plus
metadata); the per-step compression is then a single gather feeding the
same sparse kernels the packed representation uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import erf

from .backend import kernels
from .matrix import Matrix, ShapeError, as_array
from .sparsity import TransposableMask, mvue_slots_rowwise

__all__ = [
    "Activation",
    "Traversal",
    "FFNLayer",
    "FFNMasks",
    "LayerGrads",
    "gelu",
    "gelu_grad",
    "geglu_forward",
    "geglu_backward",
    "fst_forward",
    "fst_backward",
]

_RSQRT2 = 0.7071067811865476
_RSQRT2PI = 0.3989422804014327  # 1/sqrt(2*pi)


class Activation(Enum):
    RELU = "relu"
    GELU = "gelu"
    GEGLU = "geglu"


class Traversal(Enum):
    ROW_ORDER = "row_order"
    COL_ORDER = "col_order"


def gelu(x):
    """Exact GELU via the Gaussian CDF: x * Phi(x)."""
    arr = np.asarray(x, dtype=np.float64)
    out = 0.5 * arr * (1.0 + erf(arr * _RSQRT2))
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def gelu_grad(x):
    """d/dx gelu(x) = Phi(x) + x * phi(x)."""
    arr = np.asarray(x, dtype=np.float64)
    phi = _RSQRT2PI * np.exp(-0.5 * arr * arr)
    out = 0.5 * (1.0 + erf(arr * _RSQRT2)) + arr * phi
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


# ---------------------------------------------------------------------------
# layer containers


@dataclass
class FFNLayer:
    """One feed-forward layer, plain (w1) or gated (u, v).

    Widths must be divisible by 4 so the weights are groupable in both
    directions.
    """

    w2: np.ndarray  # (d, d_ff)
    activation: Activation
    b: np.ndarray  # (d_ff,)
    w1: np.ndarray | None = None  # (d_ff, d) for RELU/GELU
    u: np.ndarray | None = None  # (d_ff, d) for GEGLU
    v: np.ndarray | None = None  # (d_ff, d) for GEGLU
    c: np.ndarray | None = None  # (d_ff,) gate bias for GEGLU

    def __post_init__(self) -> None:
        d, d_ff = self.w2.shape
        if d % 4 or d_ff % 4:
            raise ShapeError(f"layer widths must be divisible by 4, got d={d}, d_ff={d_ff}")
        if self.activation is Activation.GEGLU:
            if self.u is None or self.v is None or self.c is None:
                raise ShapeError("gated layer requires u, v and both biases")
        elif self.w1 is None:
            raise ShapeError("plain layer requires w1")

    @property
    def d(self) -> int:
        return self.w2.shape[0]

    @property
    def d_ff(self) -> int:
        return self.w2.shape[1]

    def w_in(self) -> np.ndarray:
        """The first-GEMM weight: w1, or the concatenation [u; v]."""
        if self.activation is Activation.GEGLU:
            return np.concatenate([self.u, self.v], axis=0)
        return self.w1

    def bias_in(self) -> np.ndarray:
        if self.activation is Activation.GEGLU:
            return np.concatenate([self.b, self.c])
        return self.b

    @classmethod
    def gated(cls, u, v, b, c, w2) -> "FFNLayer":
        return cls(w2=w2, activation=Activation.GEGLU, b=b, u=u, v=v, c=c)

    @classmethod
    def plain(cls, w1, b, w2, activation: Activation = Activation.GELU) -> "FFNLayer":
        return cls(w2=w2, activation=activation, b=b, w1=w1)


class _GatherPlan:
    """Kept positions of one row-wise 2:4 mask, ready for the kernels.

    take: flat indices of kept entries in the source weight buffer,
    shape (m, k/2) with slots ascending along each row's groups.
    pos_t: the corresponding contraction positions, transposed to the
    (k/2, m) orientation the column-wise kernel consumes.
    """

    __slots__ = ("take", "pos_t")

    def __init__(self, bits: np.ndarray, transposed_source: bool):
        m, k = bits.shape
        g = np.ascontiguousarray(bits).reshape(m, k // 4, 4).astype(np.int64, copy=False)
        b0, b1, b2, b3 = g[:, :, 0], g[:, :, 1], g[:, :, 2], g[:, :, 3]
        i0 = np.where(b0 == 1, 0, np.where(b1 == 1, 1, 2))
        i1 = np.where(b3 == 1, 3, np.where(b2 == 1, 2, 1))
        offs = 4 * np.arange(k // 4, dtype=np.int64)
        cols = np.empty((m, k // 2), dtype=np.int64)
        cols[:, 0::2] = i0 + offs
        cols[:, 1::2] = i1 + offs
        take = np.arange(m, dtype=np.int64)[:, None] * k + cols
        if transposed_source:
            # bits mask the transpose of the source; remap (i, j) -> (j, i)
            take = (take % k) * m + (take // k)
        self.take = take
        self.pos_t = np.ascontiguousarray(cols.T)

    def product(self, a: np.ndarray, w_source: np.ndarray) -> np.ndarray:
        """a @ (masked weight).T through the sparse column-wise kernel."""
        values = np.ascontiguousarray(w_source).ravel()[self.take]
        return kernels.spmm_colwise(a, values.T, self.pos_t)


@dataclass
class FFNMasks:
    """Transposable masks for the two sparsified weight matrices.

    w_in covers w1 (or the concatenation [u; v]); w_out covers w2.
    """

    w_in: TransposableMask
    w_out: TransposableMask
    _plans: dict = field(default_factory=dict, repr=False, compare=False)

    def plans(self) -> dict:
        """Gather plans for both weights in both orientations; masks are
        validated once, on first use."""
        if not self._plans:
            self.w_in.validate()
            self.w_out.validate()
            for name, mask in (("in", self.w_in), ("out", self.w_out)):
                bits = mask.bits
                self._plans[f"{name}_fwd"] = _GatherPlan(bits, False)
                self._plans[f"{name}_bwd"] = _GatherPlan(
                    np.ascontiguousarray(bits.T), True
                )
        return self._plans


@dataclass
class LayerGrads:
    """Gradients for every parameter of an FFNLayer plus the input."""

    d_x: np.ndarray
    d_w2: np.ndarray | None = None
    d_b: np.ndarray | None = None
    d_w1: np.ndarray | None = None
    d_u: np.ndarray | None = None
    d_v: np.ndarray | None = None
    d_c: np.ndarray | None = None


# ---------------------------------------------------------------------------
# standalone gated activation


def geglu_forward(x, u, v, b, c, traversal: Traversal = Traversal.COL_ORDER):
    """gelu(x @ u.T + b) * (x @ v.T + c) via concat -> one GEMM -> split.

    The intermediate is materialized column-major (as the fully sparse
    forward produces it); `traversal` picks the gate stage's iteration
    order and does not affect values.  Returns a column-major Matrix.
    """
    xa = as_array(x, np.float64)
    w_cat = np.concatenate([np.asarray(u), np.asarray(v)], axis=0)
    d_cat = np.concatenate([np.asarray(b), np.asarray(c)])
    if xa.shape[1] != w_cat.shape[1]:
        raise ShapeError(f"x cols {xa.shape[1]} != weight cols {w_cat.shape[1]}")
    z = np.asfortranarray(xa @ w_cat.T)
    np.add(z, d_cat, out=z)
    r = np.asarray(u).shape[0]
    out = kernels.gate_gelu(z[:, :r], z[:, r:], traversal is Traversal.ROW_ORDER)
    return Matrix.col_major(out)


def geglu_backward(x, u, v, b, c, upstream) -> LayerGrads:
    """Analytic gradients of geglu_forward w.r.t. all five operands."""
    xa = as_array(x, np.float64)
    ua, va = np.asarray(u), np.asarray(v)
    up = as_array(upstream, np.float64)
    z1 = xa @ ua.T + np.asarray(b)
    z2 = xa @ va.T + np.asarray(c)
    if up.shape != z1.shape:
        raise ShapeError(f"upstream shape {up.shape} != output shape {z1.shape}")
    g1 = up * z2 * gelu_grad(z1)
    g2 = up * gelu(z1)
    return LayerGrads(
        d_x=g1 @ ua + g2 @ va,
        d_u=g1.T @ xa,
        d_v=g2.T @ xa,
        d_b=g1.sum(axis=0),
        d_c=g2.sum(axis=0),
    )


# ---------------------------------------------------------------------------
# fully sparse layer


@dataclass
class FstActivations:
    """Everything the backward pass needs from one forward pass."""

    layer: FFNLayer
    x: np.ndarray
    z: np.ndarray  # pre-activation, (N, 2*d_ff) gated or (N, d_ff) plain
    a: np.ndarray  # post-activation, (N, d_ff)
    y: np.ndarray  # layer output, (N, d)
    masks: FFNMasks | None
    w_in_cat: np.ndarray  # the materialized first-GEMM weight


def _activate(layer: FFNLayer, z: np.ndarray, traversal: Traversal) -> np.ndarray:
    if layer.activation is Activation.GEGLU:
        r = layer.d_ff
        return kernels.gate_gelu(z[:, :r], z[:, r:], traversal is Traversal.ROW_ORDER)
    if layer.activation is Activation.GELU:
        return gelu(z)
    return np.maximum(z, 0.0)


def fst_forward(
    layer: FFNLayer,
    x,
    masks: FFNMasks | None,
    traversal: Traversal = Traversal.COL_ORDER,
) -> FstActivations:
    """Forward pass; masks=None runs the plain dense layer.

    With masks, both weight products run through the compressed 2:4
    multiply on the pruned weights, and activations come out column-major.
    """
    xa = as_array(x, np.float64)
    w_in = layer.w_in()
    if masks is None:
        z = xa @ w_in.T + layer.bias_in()
        a = _activate(layer, z, traversal)
        y = np.asarray(a) @ layer.w2.T
    else:
        if masks.w_in.shape != w_in.shape or masks.w_out.shape != layer.w2.shape:
            raise ShapeError("mask shapes do not match layer weights")
        plans = masks.plans()
        z = plans["in_fwd"].product(xa, w_in)
        np.add(z, layer.bias_in(), out=z)
        a = _activate(layer, z, traversal)
        y = plans["out_fwd"].product(np.asarray(a), layer.w2)
    return FstActivations(
        layer=layer, x=xa, z=z, a=np.asarray(a), y=np.asarray(y),
        masks=masks, w_in_cat=w_in,
    )


def fst_backward(
    bundle: FstActivations,
    upstream,
    rng_seed: int = 0,
    mvue: bool = True,
) -> LayerGrads:
    """Backward pass for fst_forward.

    The input gradient reuses the same masked weights as the forward pass
    (their transposes are valid 2:4 operands because the masks are
    transposable).  With mvue=True the weight gradients sparsify the
    transposed upstream activation gradients stochastically; the result is
    unbiased for the straight-through gradient.  Weight gradients are
    reported against the dense weights (the mask is constant under
    differentiation).
    """
    layer = bundle.layer
    up = as_array(upstream, np.float64)
    if up.shape != bundle.y.shape:
        raise ShapeError(f"upstream shape {up.shape} != output shape {bundle.y.shape}")
    sparse = bundle.masks is not None
    plans = bundle.masks.plans() if sparse else None

    # through y = a @ w2m.T
    if sparse:
        da = plans["out_bwd"].product(up, layer.w2)
        dw2 = _grad_weight(up, bundle.a, rng_seed, mvue, salt=1)
    else:
        da = up @ layer.w2
        dw2 = up.T @ bundle.a

    # through the activation
    if layer.activation is Activation.GEGLU:
        r = layer.d_ff
        z1, z2 = bundle.z[:, :r], bundle.z[:, r:]
        g1 = da * z2 * gelu_grad(z1)
        g2 = da * gelu(z1)
        dz = np.concatenate([g1, g2], axis=1)
        d_b, d_c = g1.sum(axis=0), g2.sum(axis=0)
    elif layer.activation is Activation.GELU:
        dz = da * gelu_grad(bundle.z)
        d_b, d_c = dz.sum(axis=0), None
    else:
        dz = da * (bundle.z > 0)
        d_b, d_c = dz.sum(axis=0), None

    # through z = x @ w_in_m.T
    if sparse:
        d_x = plans["in_bwd"].product(dz, bundle.w_in_cat)
        dw_in = _grad_weight(dz, bundle.x, rng_seed, mvue, salt=2)
    else:
        d_x = dz @ bundle.w_in_cat
        dw_in = dz.T @ bundle.x

    grads = LayerGrads(d_x=d_x, d_w2=dw2, d_b=d_b, d_c=d_c)
    if layer.activation is Activation.GEGLU:
        grads.d_u = dw_in[: layer.d_ff]
        grads.d_v = dw_in[layer.d_ff :]
    else:
        grads.d_w1 = dw_in
    return grads


def _grad_weight(dz: np.ndarray, x: np.ndarray, rng_seed: int, mvue: bool, salt: int) -> np.ndarray:
    """dz.T @ x, with dz.T stochastically 2:4-sparsified when mvue is on."""
    dzt = np.ascontiguousarray(dz.T)
    if not mvue:
        return dzt @ x
    values2d, pos2d = mvue_slots_rowwise(dzt, rng_seed=(int(rng_seed) << 2) ^ salt)
    return kernels.spmm_rowwise(values2d, pos2d, x)
