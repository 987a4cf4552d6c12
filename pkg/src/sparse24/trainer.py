"""End-to-end sparse-training harness on a residual feed-forward stack.

Runs the fully sparse schedule (transposable masks refreshed every l
steps, decay on pruned weights, unbiased stochastic weight-gradient
sparsification) along with its baselines: dense, plain straight-through,
decay-on-weights, and dense fine-tuning / dense pre-training phase
switches.  Everything is deterministic given the config seed.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from .gated_ffn import (
    Activation,
    FFNLayer,
    FFNMasks,
    Traversal,
    fst_backward,
    fst_forward,
)
from .matrix import ShapeError
from .optim import (
    DecayConfig,
    DecayMode,
    FlipTrace,
    OptimizerState,
    adam_step,
    block_flip_stats,
    flip_rate,
    masked_decay_gradient,
    srste_weight_decay,
)
from .sparsity import transposable_search_conv

__all__ = [
    "TaskKind",
    "TrainConfig",
    "RunArtifacts",
    "Task",
    "make_task",
    "run_training",
    "run_comparison",
    "ComparisonReport",
    "COMPARISON_VARIANTS",
    "variant_config",
    "make_warmup_runner",
]


class TaskKind(Enum):
    TEACHER_STUDENT_REGRESSION = "teacher_student_regression"
    SYNTHETIC_CLASSIFICATION = "synthetic_classification"


# stream salts so the independent RNG streams never collide
_SALT_INIT = 0x12171
_SALT_TASK = 0xDA7A
_SALT_TEACHER = 0x7EAC
_SALT_EVAL = 0xE7A1
_SALT_MVUE = 0x6D76


@dataclass
class TrainConfig:
    d: int = 64
    d_ff: int = 256
    depth: int = 2
    batch: int = 32
    steps: int = 2000
    task: TaskKind = TaskKind.TEACHER_STUDENT_REGRESSION
    activation: Activation = Activation.GEGLU
    seed: int = 0
    lr: float = 1e-2
    warmup_fraction: float = 0.05
    lr_floor_fraction: float = 0.0
    dense_ft_fraction: float = 1.0 / 6.0
    dense_pretrain_fraction: float = 0.0
    sparse: bool = True
    decay: DecayConfig = field(default_factory=DecayConfig)
    mvue: bool = True
    proxy_flips: bool = False
    eval_batches: int = 8
    n_classes: int = 4
    collect_block_stats: bool = False
    # lr schedule horizon; None means `steps`.  Warmup probe runs set this
    # to the full run length so they see the genuine warm-up stage.
    schedule_total_steps: int | None = None

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        for name in ("d", "d_ff", "batch"):
            if getattr(self, name) % 4 != 0:
                raise ShapeError(f"{name} must be divisible by 4")
        for name in ("dense_ft_fraction", "dense_pretrain_fraction", "warmup_fraction"):
            frac = getattr(self, name)
            if not (0.0 <= frac < 1.0):
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def switch_step(self) -> int:
        """Last sparse step before dense fine-tuning takes over."""
        return math.ceil(self.steps * (1.0 - self.dense_ft_fraction))

    @property
    def pretrain_steps(self) -> int:
        """Dense steps at the start (dense pre-training contrast case)."""
        return self.steps - math.ceil(self.steps * (1.0 - self.dense_pretrain_fraction))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["task"] = self.task.value
        out["activation"] = self.activation.value
        out["decay"]["mode"] = self.decay.mode.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "task" in data:
            data["task"] = TaskKind(data["task"])
        if "activation" in data:
            data["activation"] = Activation(data["activation"])
        if "decay" in data and isinstance(data["decay"], dict):
            dec = dict(data["decay"])
            if "mode" in dec:
                dec["mode"] = DecayMode(dec["mode"])
            data["decay"] = DecayConfig(**dec)
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_json_file(cls, path: str) -> "TrainConfig":
        with open(path) as f:
            return cls.from_json(f.read())


# ---------------------------------------------------------------------------
# model


class _FFNStack:
    """Residual stack of FFN layers over one flat parameter vector."""

    def __init__(self, d: int, d_ff: int, depth: int, activation: Activation):
        self.d, self.d_ff, self.depth, self.activation = d, d_ff, depth, activation
        self.segments: list[dict] = []
        off = 0
        in_rows = 2 * d_ff if activation is Activation.GEGLU else d_ff
        for blk in range(depth):
            seg = {}
            for name, shape, sparsify in (
                ("w_in", (in_rows, d), True),
                ("bias", (in_rows,), False),
                ("w2", (d, d_ff), True),
            ):
                n = int(np.prod(shape))
                seg[name] = (off, shape, sparsify)
                off += n
            self.segments.append(seg)
        self.size = off

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        w = np.zeros(self.size)
        for seg in self.segments:
            off, shape, _ = seg["w_in"]
            w[off : off + int(np.prod(shape))] = (
                rng.standard_normal(shape) / math.sqrt(self.d)
            ).ravel()
            off, shape, _ = seg["w2"]
            w[off : off + int(np.prod(shape))] = (
                rng.standard_normal(shape) / math.sqrt(self.d_ff)
            ).ravel()
        return w

    def _view(self, w: np.ndarray, blk: int, name: str) -> np.ndarray:
        off, shape, _ = self.segments[blk][name]
        return w[off : off + int(np.prod(shape))].reshape(shape)

    def layer(self, w: np.ndarray, blk: int) -> FFNLayer:
        w_in = self._view(w, blk, "w_in")
        bias = self._view(w, blk, "bias")
        w2 = self._view(w, blk, "w2")
        if self.activation is Activation.GEGLU:
            r = self.d_ff
            return FFNLayer.gated(u=w_in[:r], v=w_in[r:], b=bias[:r], c=bias[r:], w2=w2)
        return FFNLayer.plain(w1=w_in, b=bias, w2=w2, activation=self.activation)

    def sparse_weights(self, w: np.ndarray):
        for blk, seg in enumerate(self.segments):
            for name in ("w_in", "w2"):
                off, shape, _ = seg[name]
                yield blk, name, off, self._view(w, blk, name)

    def search_masks(self, w: np.ndarray) -> tuple[list[FFNMasks], int]:
        masks, calls = [], 0
        for blk in range(self.depth):
            m_in = transposable_search_conv(self._view(w, blk, "w_in"))
            m_out = transposable_search_conv(self._view(w, blk, "w2"))
            masks.append(FFNMasks(w_in=m_in, w_out=m_out))
            calls += 2
        return masks, calls

    def mask_vector(self, masks: list[FFNMasks]) -> np.ndarray:
        vec = np.ones(self.size, dtype=np.uint8)
        for blk, seg in enumerate(self.segments):
            for name, bits in (("w_in", masks[blk].w_in.bits), ("w2", masks[blk].w_out.bits)):
                off, shape, _ = seg[name]
                vec[off : off + int(np.prod(shape))] = bits.ravel()
        return vec

    def forward(self, w: np.ndarray, x: np.ndarray, masks: list[FFNMasks] | None):
        h = x
        bundles = []
        for blk in range(self.depth):
            bundle = fst_forward(
                self.layer(w, blk), h, None if masks is None else masks[blk],
                traversal=Traversal.COL_ORDER,
            )
            bundles.append(bundle)
            h = h + bundle.y
        return h, bundles

    def backward(self, bundles, d_out: np.ndarray, seed: int, step: int, mvue: bool) -> np.ndarray:
        g = np.zeros(self.size)
        dh = d_out
        for blk in range(self.depth - 1, -1, -1):
            layer_seed = np.random.SeedSequence(
                [int(seed) & 0xFFFF_FFFF, _SALT_MVUE, step, blk]
            ).generate_state(1, np.uint64)[0]
            lg = fst_backward(bundles[blk], dh, rng_seed=int(layer_seed), mvue=mvue)
            seg = self.segments[blk]
            w_in_g = self._view(g, blk, "w_in")
            if self.activation is Activation.GEGLU:
                w_in_g[: self.d_ff] = lg.d_u
                w_in_g[self.d_ff :] = lg.d_v
                bias_g = self._view(g, blk, "bias")
                bias_g[: self.d_ff] = lg.d_b
                bias_g[self.d_ff :] = lg.d_c
            else:
                w_in_g[:] = lg.d_w1
                self._view(g, blk, "bias")[:] = lg.d_b
            self._view(g, blk, "w2")[:] = lg.d_w2
            dh = dh + lg.d_x  # residual connection
        return g


# ---------------------------------------------------------------------------
# tasks


class Task:
    """Deterministic mini-batch stream plus loss/gradient for one task."""

    def __init__(self, kind: TaskKind, seed: int, *, d: int, batch: int,
                 depth: int = 2, d_ff: int = 256,
                 activation: Activation = Activation.GEGLU, n_classes: int = 4):
        self.kind, self.seed = kind, seed
        self.d, self.batch, self.n_classes = d, batch, n_classes
        self._rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFF_FFFF, _SALT_TASK]))
        if kind is TaskKind.TEACHER_STUDENT_REGRESSION:
            self._teacher = _FFNStack(d, d_ff, depth, activation)
            rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFF_FFFF, _SALT_TEACHER]))
            self._teacher_w = self._teacher.init_params(rng)
        else:
            rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFF_FFFF, _SALT_TEACHER]))
            self._means = rng.standard_normal((n_classes, d))

    def _make_batch(self, rng: np.random.Generator):
        if self.kind is TaskKind.TEACHER_STUDENT_REGRESSION:
            x = rng.standard_normal((self.batch, self.d))
            y, _ = self._teacher.forward(self._teacher_w, x, None)
            return x, y
        labels = rng.integers(0, self.n_classes, size=self.batch)
        x = self._means[labels] + 0.5 * rng.standard_normal((self.batch, self.d))
        return x, labels

    def next_batch(self):
        return self._make_batch(self._rng)

    def eval_batches(self, n: int):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed & 0xFFFF_FFFF, _SALT_EVAL]))
        return [self._make_batch(rng) for _ in range(n)]

    def loss(self, out: np.ndarray, target) -> float:
        if self.kind is TaskKind.TEACHER_STUDENT_REGRESSION:
            return float(np.mean((out - target) ** 2))
        logits = out[:, : self.n_classes]
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        return float(-logp[np.arange(len(target)), target].mean())

    def loss_and_grad(self, out: np.ndarray, target):
        if self.kind is TaskKind.TEACHER_STUDENT_REGRESSION:
            diff = out - target
            return float(np.mean(diff**2)), 2.0 * diff / diff.size
        k = self.n_classes
        logits = out[:, :k] - out[:, :k].max(axis=1, keepdims=True)
        expz = np.exp(logits)
        p = expz / expz.sum(axis=1, keepdims=True)
        rows = np.arange(len(target))
        loss = float(-np.log(p[rows, target]).mean())
        dlogits = p.copy()
        dlogits[rows, target] -= 1.0
        dout = np.zeros_like(out)
        dout[:, :k] = dlogits / len(target)
        return loss, dout


def make_task(kind: TaskKind, seed: int, **dims) -> Task:
    """Build a deterministic data generator; see Task for the kinds."""
    return Task(kind, seed, **dims)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class RunArtifacts:
    config: TrainConfig
    losses: np.ndarray  # length T
    flips: np.ndarray  # length T; refresh steps carry the flip rate
    final_w: np.ndarray
    final_eval_loss: float
    mask_search_calls: int
    proxy_rates: np.ndarray | None = None
    block_stats: list[tuple[str, FlipTrace]] | None = None

    def save(self, outdir: str) -> None:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "loss.csv"), "w") as f:
            f.write("step,loss\n")
            for i, v in enumerate(self.losses, start=1):
                f.write(f"{i},{v:.10g}\n")
        with open(os.path.join(outdir, "flips.csv"), "w") as f:
            f.write("step,r_t\n")
            for i, v in enumerate(self.flips, start=1):
                f.write(f"{i},{v:.10g}\n")
        report = {
            "config": self.config.to_dict(),
            "eval": {"final_eval_loss": self.final_eval_loss},
            "counters": {
                "mask_search_calls": self.mask_search_calls,
                "steps": int(len(self.losses)),
            },
        }
        with open(os.path.join(outdir, "report.json"), "w") as f:
            json.dump(report, f, indent=2)
        if self.block_stats is not None:
            with open(os.path.join(outdir, "blocks.csv"), "w") as f:
                f.write("weight,block,cum_flips,l1_gap\n")
                for name, trace in self.block_stats:
                    for i in range(len(trace.block_flips)):
                        f.write(
                            f"{name},{i},{int(trace.block_flips[i])},"
                            f"{trace.block_gaps[i]:.10g}\n"
                        )


def _lr_at(t: int, total: int, peak: float, warmup_fraction: float, floor_fraction: float) -> float:
    warmup = max(1, int(round(warmup_fraction * total)))
    if t <= warmup:
        return peak * t / warmup
    floor = floor_fraction * peak
    frac = (t - warmup) / max(1, total - warmup)
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


def run_training(cfg: TrainConfig) -> RunArtifacts:
    """Run one configuration end to end; deterministic given cfg.seed."""
    stack = _FFNStack(cfg.d, cfg.d_ff, cfg.depth, cfg.activation)
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0xFFFF_FFFF, _SALT_INIT]))
    state = OptimizerState.init(stack.init_params(init_rng), lr=cfg.lr)
    task = make_task(
        cfg.task, cfg.seed, d=cfg.d, batch=cfg.batch, depth=cfg.depth,
        d_ff=cfg.d_ff, activation=cfg.activation, n_classes=cfg.n_classes,
    )

    T = cfg.steps
    t_switch = cfg.switch_step if cfg.dense_ft_fraction > 0 else T
    t_pre = cfg.pretrain_steps
    sched_total = cfg.schedule_total_steps or T

    losses = np.zeros(T)
    flips = np.zeros(T)
    proxy = np.zeros(T) if cfg.proxy_flips else None
    searches = 0
    masks = None
    mask_vec = np.ones(stack.size, dtype=np.uint8)
    have_masks = False
    since_refresh = 0
    snapshots: dict[str, list[np.ndarray]] = {}

    prev_proxy_vec = None
    if proxy is not None:
        m0, calls = stack.search_masks(state.w)
        searches += calls
        prev_proxy_vec = stack.mask_vector(m0)

    for t in range(1, T + 1):
        state.lr = _lr_at(t, sched_total, cfg.lr, cfg.warmup_fraction, cfg.lr_floor_fraction)
        sparse_now = cfg.sparse and t > t_pre and t <= t_switch

        if sparse_now and (masks is None or since_refresh >= cfg.decay.refresh_period):
            new_masks, calls = stack.search_masks(state.w)
            searches += calls
            new_vec = stack.mask_vector(new_masks)
            if have_masks:
                flips[t - 1] = flip_rate(mask_vec, new_vec)
            masks, mask_vec, have_masks = new_masks, new_vec, True
            since_refresh = 0
            if cfg.collect_block_stats:
                for blk, name, _, wview in stack.sparse_weights(state.w):
                    snapshots.setdefault(f"block{blk}.{name}", []).append(wview.copy())

        x, target = task.next_batch()
        out, bundles = stack.forward(state.w, x, masks if sparse_now else None)
        loss, dout = task.loss_and_grad(out, target)
        g = stack.backward(bundles, dout, seed=cfg.seed, step=t, mvue=cfg.mvue and sparse_now)

        lam = cfg.decay.lambda_w
        if sparse_now and lam > 0 and cfg.decay.mode is DecayMode.ON_GRADIENTS:
            g = masked_decay_gradient(g, state.w, mask_vec, lam)
        w_before = state.w.copy() if (
            sparse_now and lam > 0 and cfg.decay.mode is DecayMode.ON_WEIGHTS
        ) else None
        adam_step(state, g)
        if w_before is not None:
            state.w[:] = srste_weight_decay(state.w, w_before, mask_vec, state.lr, lam)

        losses[t - 1] = loss
        since_refresh += 1

        if proxy is not None:
            pm, calls = stack.search_masks(state.w)
            searches += calls
            vec = stack.mask_vector(pm)
            proxy[t - 1] = flip_rate(prev_proxy_vec, vec)
            prev_proxy_vec = vec

    final_sparse = cfg.sparse and T > t_pre and T <= t_switch
    eval_loss = _evaluate(stack, state.w, task, cfg, masks if final_sparse else None)

    block_stats = None
    if cfg.collect_block_stats and snapshots:
        block_stats = [
            (name, block_flip_stats(snaps))
            for name, snaps in snapshots.items()
            if len(snaps) >= 2
        ]

    rates = proxy if (not cfg.sparse and proxy is not None) else flips
    return RunArtifacts(
        config=cfg,
        losses=losses,
        flips=rates,
        final_w=state.w.copy(),
        final_eval_loss=eval_loss,
        mask_search_calls=searches,
        proxy_rates=proxy,
        block_stats=block_stats,
    )


def _evaluate(stack, w, task, cfg, masks) -> float:
    total = 0.0
    batches = task.eval_batches(cfg.eval_batches)
    for x, target in batches:
        out, _ = stack.forward(w, x, masks)
        total += task.loss(out, target)
    return total / len(batches)


# ---------------------------------------------------------------------------
# comparisons and the warmup handle for the decay-factor search

COMPARISON_VARIANTS = (
    "dense",
    "ste",
    "srste",
    "masked_decay",
    "masked_decay_dense_ft",
    "masked_decay_dense_pretrain",
)


def variant_config(base: TrainConfig, name: str) -> TrainConfig:
    """Derive a named baseline/ablation config sharing T and seed."""
    budget = base.dense_ft_fraction if base.dense_ft_fraction > 0 else 1.0 / 6.0
    lam = base.decay.lambda_w
    period = base.decay.refresh_period
    if name == "dense":
        return replace(base, sparse=False, proxy_flips=True,
                       dense_ft_fraction=0.0, dense_pretrain_fraction=0.0)
    if name == "ste":
        return replace(base, sparse=True, dense_ft_fraction=0.0,
                       dense_pretrain_fraction=0.0,
                       decay=DecayConfig(0.0, DecayMode.NONE, period))
    if name == "srste":
        return replace(base, sparse=True, dense_ft_fraction=0.0,
                       dense_pretrain_fraction=0.0,
                       decay=DecayConfig(lam, DecayMode.ON_WEIGHTS, period))
    if name == "masked_decay":
        return replace(base, sparse=True, dense_ft_fraction=0.0,
                       dense_pretrain_fraction=0.0,
                       decay=DecayConfig(lam, DecayMode.ON_GRADIENTS, period))
    if name == "masked_decay_dense_ft":
        return replace(base, sparse=True, dense_ft_fraction=budget,
                       dense_pretrain_fraction=0.0,
                       decay=DecayConfig(lam, DecayMode.ON_GRADIENTS, period))
    if name == "masked_decay_dense_pretrain":
        return replace(base, sparse=True, dense_ft_fraction=0.0,
                       dense_pretrain_fraction=budget,
                       decay=DecayConfig(lam, DecayMode.ON_GRADIENTS, period))
    raise ValueError(f"unknown variant {name!r}")


@dataclass
class ComparisonReport:
    base: TrainConfig
    runs: dict[str, RunArtifacts]

    def summary(self) -> dict:
        out = {}
        for name, art in self.runs.items():
            tail = art.flips[-max(1, len(art.flips) // 5):]
            out[name] = {
                "final_eval_loss": art.final_eval_loss,
                "tail_flip_mean": float(tail.mean()),
                "mask_search_calls": art.mask_search_calls,
            }
        return out

    def to_json(self) -> str:
        return json.dumps(
            {"config": self.base.to_dict(), "results": self.summary()}, indent=2
        )


def run_comparison(base_cfg: TrainConfig, variants=COMPARISON_VARIANTS) -> ComparisonReport:
    """Train every variant with the shared seed/step budget and report."""
    runs = {}
    for name in variants:
        runs[name] = run_training(variant_config(base_cfg, name))
    steps = {art.config.steps for art in runs.values()}
    seeds = {art.config.seed for art in runs.values()}
    if len(steps) > 1 or len(seeds) > 1:
        raise ValueError("comparison variants must share steps and seed")
    return ComparisonReport(base=base_cfg, runs=runs)


def make_warmup_runner(base_cfg: TrainConfig, warmup_steps: int,
                       refresh_period: int = 1) -> Callable[[float | None], np.ndarray]:
    """Warmup handle for the decay-factor search.

    Runs the first `warmup_steps` of base_cfg's schedule.  None runs the
    dense proxy (per-step flip instrumentation on a dense run); a float
    runs the sparse config with that decay factor, refreshing masks every
    `refresh_period` steps (1 keeps the traces per-step comparable).
    """

    def runner(lam: float | None) -> np.ndarray:
        common = dict(
            steps=warmup_steps,
            schedule_total_steps=base_cfg.steps,
            dense_ft_fraction=0.0,
            dense_pretrain_fraction=0.0,
            collect_block_stats=False,
        )
        if lam is None:
            cfg = replace(base_cfg, sparse=False, proxy_flips=True, **common)
        else:
            cfg = replace(
                base_cfg, sparse=True, proxy_flips=False,
                decay=DecayConfig(lam, DecayMode.ON_GRADIENTS, refresh_period),
                **common,
            )
        return run_training(cfg).flips

    return runner
