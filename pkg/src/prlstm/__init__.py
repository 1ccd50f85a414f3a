"""Parallel Recursive LSTM: gated state composition over a balanced scan schedule."""

from .model import LatentState, ModelConfig, count_params, forward, init_params
from .scan import ScanPlan, ScanStep, build_plan, depth_work, execute_prefix, execute_reduce
from .tensor import Tape, Tensor, backward

__all__ = [
    "LatentState", "ModelConfig", "count_params", "forward", "init_params",
    "ScanPlan", "ScanStep", "build_plan", "depth_work", "execute_prefix", "execute_reduce",
    "Tape", "Tensor", "backward",
]
