"""Attention masks for lattice symmetries, gated mask experts, and a small synthetic-task harness."""

__version__ = "0.1.0"

from .errors import (
    DegenerateRow,
    EmptyPool,
    InvalidFactor,
    InvalidShape,
    LatFormerError,
    NonFinite,
    NumericalInstability,
    ParseError,
    SizeOverflow,
    ValidationError,
)
from .lattice import Compose, Identity, LatticeShape, Reflect, Rotate90, Scale, Translate, apply_action, parse_action
from .masks import (
    compose_masks,
    conv_kernels_for,
    convolve_identity,
    kernels_for_shift,
    kronecker_mask,
    mask_for_action,
    mask_from_shift,
    mask_via_fourier,
    shift_vector,
)
from .attention import masked_attention, masked_self_attention, softmax_rows
from .experts import ExpertStack, discretize_gates, expert_forward, gate_network, product_of_experts
from .smoothing import dual_loss, group_graph, heat_smooth
from .model import LatFormer, ModelConfig, loss_and_grads, predict
from .training import TrainConfig, evaluate, train
from .tasks import Task, color_permute, generate_task, load_arc_json, sample_task_suite, write_arc_json

__all__ = [
    "__version__",
    "LatFormerError", "InvalidShape", "InvalidFactor", "NumericalInstability", "SizeOverflow", "DegenerateRow",
    "NonFinite", "EmptyPool", "ParseError", "ValidationError",
    "LatticeShape", "Identity", "Translate", "Rotate90", "Reflect", "Scale", "Compose", "apply_action", "parse_action",
    "shift_vector", "mask_from_shift", "mask_via_fourier", "conv_kernels_for", "kernels_for_shift",
    "convolve_identity", "kronecker_mask", "compose_masks", "mask_for_action",
    "softmax_rows", "masked_attention", "masked_self_attention",
    "ExpertStack", "expert_forward", "gate_network", "discretize_gates", "product_of_experts",
    "group_graph", "heat_smooth", "dual_loss",
    "LatFormer", "ModelConfig", "loss_and_grads", "predict", "TrainConfig", "train", "evaluate",
    "Task", "generate_task", "sample_task_suite", "color_permute", "load_arc_json", "write_arc_json",
]
