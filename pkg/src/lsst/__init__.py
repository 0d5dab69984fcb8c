"""Separate-spectral transformer toolkit for snapshot spectral imaging."""

__version__ = "0.1.0"

from .blocks import ModelConfig, ParameterStore, build_model
from .optics import (NoiseSpec, SensingOperator, adjoint_sense, forward_sense,
                     random_mask, shift_back_init, synth_scene)

__all__ = [
    "ModelConfig",
    "NoiseSpec",
    "ParameterStore",
    "SensingOperator",
    "adjoint_sense",
    "build_model",
    "forward_sense",
    "random_mask",
    "shift_back_init",
    "synth_scene",
    "__version__",
]
