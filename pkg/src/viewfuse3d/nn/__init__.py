from .core import (
    FeedForward,
    MultiHeadAttention,
    TransformerBlock,
    attention,
    cross_entropy,
    sinusoidal_positions,
    transformer_block,
    zero_residual_branches,
)
from .gradcheck import gradcheck
from .params import LrSchedule, OptimizerState, ParameterStore, adamw_step, lr_at_step

__all__ = [
    "FeedForward",
    "LrSchedule",
    "MultiHeadAttention",
    "OptimizerState",
    "ParameterStore",
    "TransformerBlock",
    "adamw_step",
    "attention",
    "cross_entropy",
    "gradcheck",
    "lr_at_step",
    "sinusoidal_positions",
    "transformer_block",
    "zero_residual_branches",
]
