"""Tensor arithmetic, reverse-mode differentiation, and Adam."""

from . import ops
from .engine import CountingTape, OpCounter, Tape, Tensor, backward, gradients
from .gradcheck import grad_check, grad_check_sampled
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "CountingTape",
    "OpCounter",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "grad_check",
    "grad_check_sampled",
    "gradients",
    "ops",
]
