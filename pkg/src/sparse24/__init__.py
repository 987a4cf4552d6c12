"""Fully sparse training with 2:4 semi-structured sparsity, desk scale.

Pruning and transposable mask search, unbiased stochastic gradient
sparsification, compressed sparse matmul simulation, masked-decay
optimization with flip-rate instrumentation, and a toy training harness.
Hot kernels run from a compiled extension when available, with a
bit-identical numpy fallback (see sparse24.backend.BACKEND).
"""

from .backend import BACKEND
from .matrix import Direction, FormatError, Layout, Matrix, ShapeError
from .sparsity import (
    Mask24,
    PatternTable,
    SparseEstimate,
    TransposableMask,
    apply_mask,
    enumerate_patterns,
    mvue_prune,
    prune_2of4,
    transposable_search_conv,
    transposable_search_greedy,
)
from .spmm import (
    Compressed24,
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
from .gated_ffn import (
    Activation,
    FFNLayer,
    FFNMasks,
    LayerGrads,
    Traversal,
    fst_backward,
    fst_forward,
    gelu,
    gelu_grad,
    geglu_backward,
    geglu_forward,
)
from .optim import (
    DecayConfig,
    DecayMode,
    FlipTrace,
    OptimizerState,
    adam_step,
    block_flip_stats,
    decay_factor_search,
    flip_rate,
    masked_decay_gradient,
    srste_weight_decay,
)
from .trainer import (
    RunArtifacts,
    TaskKind,
    TrainConfig,
    make_task,
    make_warmup_runner,
    run_comparison,
    run_training,
)

__version__ = "0.1.0"
