"""Minimal numpy neural-network substrate with explicit backward passes."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    Conv1d,
    Conv2d,
    ConvTranspose2d,
    Embedding,
    GlobalAvgPool,
    GroupNorm,
    Linear,
    Module,
    Parameter,
    ReLU,
    Sequential,
    Sigmoid,
    SiLU,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "functional", "load_checkpoint", "save_checkpoint", "Conv1d", "Conv2d",
    "ConvTranspose2d", "Embedding", "GlobalAvgPool", "GroupNorm", "Linear",
    "Module", "Parameter", "ReLU", "Sequential", "Sigmoid", "SiLU", "Adam",
    "AdamState", "adam_step",
]
