"""Parameterised building blocks on top of the autodiff ops."""
from collections import OrderedDict
from typing import Dict, Iterator, List, Tuple

import numpy as np

from app.autograd.tensor import (
    Tensor,
    attention,
    gelu,
    layernorm,
    linear,
    patchify,
    rearrange,
    transpose,
)
from app.exceptions import ShapeError


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Module:
    """Container whose Tensor attributes with ``requires_grad`` are its parameters.

    Parameters are enumerated in attribute-definition order, which fixes the
    checkpoint layout and the optimizer's update order.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise ShapeError("load_state_dict", detail=f"missing parameters {missing[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError("load_state_dict", p.shape, arr.shape, detail=name)
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True, scale: float = 1.0):
        std = scale * np.sqrt(2.0 / (fan_in + fan_out))
        self.weight = parameter(rng.normal(0.0, std, size=(fan_in, fan_out)))
        self.bias = parameter(np.zeros(fan_out)) if bias else None

    def forward(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))

    def forward(self, x) -> Tensor:
        return layernorm(x, self.gamma, self.beta)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, out_dim: int = None):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim or dim, rng)

    def forward(self, x) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Self-attention over the second-to-last axis of (..., S, d)."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ShapeError("attention", (dim,), detail=f"{heads} heads do not divide width {dim}")
        self.heads = heads
        self.dim = dim
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)

    def forward(self, x) -> Tensor:
        d = self.dim
        qkv = self.qkv(x)
        q, k, v = (
            rearrange(qkv[..., i * d:(i + 1) * d], "... s (h e) -> ... h s e",
                      "... h s e -> ... s (h e)", h=self.heads)
            for i in range(3)
        )
        out = attention(q, k, v)
        out = rearrange(out, "... h s e -> ... s (h e)", "... s (h e) -> ... h s e", h=self.heads)
        return self.proj(out)


class TransformerBlock(Module):
    """Pre-norm attention + MLP block acting over one axis of (B, T, N, d) tokens.

    ``axis="spatial"`` attends across the N patches of each frame,
    ``axis="temporal"`` across the T frames at each patch location.
    """

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator, axis: str = "spatial"):
        if axis not in ("spatial", "temporal"):
            raise ValueError(f"axis must be 'spatial' or 'temporal', got {axis!r}")
        self.axis = axis
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, mlp_ratio * dim, rng)

    def forward(self, x) -> Tensor:
        if self.axis == "temporal":
            x = transpose(x, (0, 2, 1, 3))
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        if self.axis == "temporal":
            x = transpose(x, (0, 2, 1, 3))
        return x


class PatchEmbed(Module):
    """Linear patch embedding: (..., C, H, W) -> (..., N, d)."""

    def __init__(self, channels: int, patch: int, dim: int, rng: np.random.Generator):
        self.patch = patch
        self.channels = channels
        self.proj = Linear(patch * patch * channels, dim, rng)

    def forward(self, x) -> Tensor:
        if x.shape[-3] != self.channels:
            raise ShapeError("patch-embed", x.shape, detail=f"expected {self.channels} channels")
        return self.proj(patchify(x, self.patch))


def timestep_embedding(tau: np.ndarray, dim: int, max_period: float = 10_000.0) -> np.ndarray:
    """Sinusoidal embedding of flow times in [0, 1]: (B,) -> (B, dim)."""
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = 1000.0 * tau[:, None] * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb
