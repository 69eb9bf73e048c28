"""Float64 reverse-mode autodiff, layers, AdamW and PTNT checkpoints."""
from app.autograd.checkpoint import load_checkpoint, save_checkpoint
from app.autograd.layers import (
    MLP,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    PatchEmbed,
    TransformerBlock,
    timestep_embedding,
)
from app.autograd.optim import AdamW, AdamWState, LrSchedule, adamw_step
from app.autograd.tensor import Tensor, is_grad_enabled, no_grad

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "Module",
    "Linear",
    "LayerNorm",
    "MLP",
    "MultiHeadAttention",
    "TransformerBlock",
    "PatchEmbed",
    "timestep_embedding",
    "AdamW",
    "AdamWState",
    "LrSchedule",
    "adamw_step",
    "save_checkpoint",
    "load_checkpoint",
]
