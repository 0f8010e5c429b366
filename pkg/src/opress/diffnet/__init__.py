"""Differentiable residual U-Net with its own reverse-mode engine and Adam."""

from .adam import AdamState, adam_step
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .model import GradStore, LayerSpec, Model, apply, backward, bind, build_model, forward

__all__ = [
    "AdamState", "Checkpoint", "GradStore", "LayerSpec", "Model", "adam_step", "apply",
    "backward", "bind", "build_model", "forward", "load_checkpoint", "save_checkpoint",
]
