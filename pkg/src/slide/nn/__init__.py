"""Minimal from-scratch neural kit backing the duration and unit models.

A two-tower transformer over two synchronized token streams: per layer, each
stream runs causal self-attention over itself, then causal cross-attention
into the other stream's same-layer states, then a feed-forward block. The
towers share one parameter set. Everything is plain numpy float64 with
hand-written backward passes validated by finite differences.
"""

from .config import ModelConfig
from .model import (
    CONTENT,
    CONDITION,
    DecodeSession,
    ForwardResult,
    backward,
    backward_and_step,
    cross_entropy,
    forward,
    init_params,
    log_softmax,
    sample_token,
    softmax,
)
from .optim import Adam
from .gradcheck import GradCheckReport, grad_check, grad_check_linear
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "CONTENT",
    "CONDITION",
    "DecodeSession",
    "ForwardResult",
    "GradCheckReport",
    "ModelConfig",
    "backward",
    "backward_and_step",
    "cross_entropy",
    "forward",
    "grad_check",
    "grad_check_linear",
    "init_params",
    "load_checkpoint",
    "log_softmax",
    "sample_token",
    "save_checkpoint",
    "softmax",
]
