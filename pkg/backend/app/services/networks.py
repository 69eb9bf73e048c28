"""Velocity networks for flow matching and the autoregressive baseline.

All models follow one calling convention,
``model(x, tau, conditioning) -> Tensor`` shaped like ``x``, where ``x`` is
(B, T, 2, H, W), ``tau`` is (B,) and ``conditioning`` is (B, T, 3, H, W)
mask/value channels. The AR model ignores ``tau``.
"""
import logging
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from app.autograd.checkpoint import load_checkpoint, save_checkpoint
from app.autograd.layers import (
    LayerNorm,
    Linear,
    MLP,
    Module,
    PatchEmbed,
    TransformerBlock,
    parameter,
    timestep_embedding,
)
from app.autograd.tensor import Tensor, add, as_tensor, concat, gelu, reshape, unpatchify
from app.exceptions import FormatError, ShapeError
from app.models.network import NetworkConfig
from app.models.run_config import ModelKind

logger = logging.getLogger(__name__)

STATE_CHANNELS = 2
CONDITIONING_CHANNELS = 3


class FlowTimeEmbedding(Module):
    """Sinusoidal features of tau followed by Linear -> GELU -> Linear."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.fc1 = Linear(dim, dim, rng)
        self.fc2 = Linear(dim, dim, rng)

    def forward(self, tau) -> Tensor:
        return self.fc2(gelu(self.fc1(timestep_embedding(tau, self.dim))))


class WindowModel(Module):
    """Spatiotemporal transformer over a window of (state, mask, value) frames.

    Frames are embedded patch-wise; blocks alternate attention across the
    patches of a frame and across the frames at a patch location.
    """

    def __init__(self, config: NetworkConfig):
        if config.kind != ModelKind.PAINT:
            raise ValueError(f"WindowModel needs a paint config, got {config.kind}")
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.dim
        self.embed = PatchEmbed(STATE_CHANNELS + CONDITIONING_CHANNELS, config.patch, d, rng)
        self.pos_space = parameter(rng.normal(0.0, 0.02, size=(config.n_patches, d)))
        self.pos_time = parameter(rng.normal(0.0, 0.02, size=(config.window, 1, d)))
        self.time_embed = FlowTimeEmbedding(d, rng)
        self.blocks = [
            TransformerBlock(d, config.heads, config.mlp_ratio, rng, axis="spatial" if i % 2 == 0 else "temporal")
            for i in range(config.layers)
        ]
        self.norm = LayerNorm(d)
        self.head = Linear(d, config.patch * config.patch * STATE_CHANNELS, rng, scale=0.1)

    def forward(self, x, tau, conditioning) -> Tensor:
        x = as_tensor(x)
        cfg = self.config
        expected = (cfg.window, STATE_CHANNELS) + tuple(cfg.grid)
        if x.ndim != 5 or x.shape[1:] != expected:
            raise ShapeError("window-model", x.shape, (-1,) + expected)
        if np.shape(conditioning) != x.shape[:2] + (CONDITIONING_CHANNELS,) + x.shape[3:]:
            raise ShapeError("window-model", x.shape, np.shape(conditioning), detail="conditioning")
        batch = x.shape[0]
        tokens = self.embed(concat([x, conditioning], axis=2))           # (B, T, N, d)
        tokens = tokens + self.pos_space + self.pos_time
        t_emb = reshape(self.time_embed(np.broadcast_to(tau, (batch,))), (batch, 1, 1, cfg.dim))
        tokens = tokens + t_emb
        for block in self.blocks:
            tokens = block(tokens)
        out = self.head(self.norm(tokens))
        return unpatchify(out, cfg.patch, STATE_CHANNELS, cfg.grid)


class ARModel(Module):
    """Next-frame predictor on (context frames, mask, values) channels of one step.

    Predicts the increment over the most recent context frame.
    """

    def __init__(self, config: NetworkConfig):
        if config.kind != ModelKind.AR:
            raise ValueError(f"ARModel needs an ar config, got {config.kind}")
        self.config = config
        rng = np.random.default_rng(config.seed)
        d = config.dim
        channels = STATE_CHANNELS * config.context + CONDITIONING_CHANNELS
        self.embed = PatchEmbed(channels, config.patch, d, rng)
        self.pos_space = parameter(rng.normal(0.0, 0.02, size=(config.n_patches, d)))
        self.blocks = [
            TransformerBlock(d, config.heads, config.mlp_ratio, rng, axis="spatial")
            for _ in range(config.layers)
        ]
        self.norm = LayerNorm(d)
        self.head = Linear(d, config.patch * config.patch * STATE_CHANNELS, rng, scale=0.1)

    def forward(self, context, tau=None, conditioning=None) -> Tensor:
        """``context`` (B, c, 2, H, W) ground-truth or rolled-out frames; ``conditioning``
        (B, 3, H, W) probes of the predicted frame. Returns (B, 2, H, W)."""
        context = as_tensor(context)
        cfg = self.config
        if context.ndim != 5 or context.shape[1:] != (cfg.context, STATE_CHANNELS) + tuple(cfg.grid):
            raise ShapeError("ar-model", context.shape, (-1, cfg.context, STATE_CHANNELS) + tuple(cfg.grid))
        batch = context.shape[0]
        if conditioning is None or np.shape(conditioning) != (batch, CONDITIONING_CHANNELS) + tuple(cfg.grid):
            raise ShapeError("ar-model", context.shape, np.shape(conditioning), detail="conditioning")
        stacked = reshape(context, (batch, cfg.context * STATE_CHANNELS) + tuple(cfg.grid))
        tokens = self.embed(concat([stacked, conditioning], axis=1)) + self.pos_space
        for block in self.blocks:
            tokens = block(tokens)
        delta = unpatchify(self.head(self.norm(tokens)), cfg.patch, STATE_CHANNELS, cfg.grid)
        return add(context[:, -1], delta)


class ToyVelocityMLP(Module):
    """Velocity field for point clouds stored as (B, 1, d, 1, 1) "windows"."""

    def __init__(self, dim: int = 2, hidden: int = 64, time_features: int = 16, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.time_features = time_features
        self.inp = Linear(dim + time_features, hidden, rng)
        self.mlp = MLP(hidden, hidden, rng, out_dim=dim)

    def forward(self, x, tau, conditioning=None) -> Tensor:
        x = as_tensor(x)
        batch = x.shape[0]
        flat = reshape(x, (batch, self.dim))
        feats = timestep_embedding(np.broadcast_to(tau, (batch,)), self.time_features)
        h = gelu(self.inp(concat([flat, feats], axis=1)))
        return reshape(self.mlp(h), x.shape)


def build_model(config: NetworkConfig) -> Union[WindowModel, ARModel]:
    model = WindowModel(config) if config.kind == ModelKind.PAINT else ARModel(config)
    logger.info(f"Built {config.kind.value} model with {model.parameter_count()} parameters")
    return model


def save_model(
    path: Union[str, Path],
    model: Union[WindowModel, ARModel],
    extra: Dict[str, np.ndarray] = None,
) -> Path:
    tensors = dict(model.config.to_tensors())
    tensors.update(model.state_dict())
    if extra:
        tensors.update(extra)
    return save_checkpoint(path, tensors)


def load_model(path: Union[str, Path]) -> Tuple[Union[WindowModel, ARModel], Dict[str, np.ndarray]]:
    """Rebuild a model from its checkpoint; returns it with the raw tensor dict."""
    tensors = load_checkpoint(path)
    try:
        config = NetworkConfig.from_tensors(tensors)
    except ValueError as e:
        raise FormatError(f"{path}: {e}")
    model = build_model(config)
    model.load_state_dict(tensors)
    return model, tensors
