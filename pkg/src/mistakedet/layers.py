"""Transformer building blocks shared by the frame encoder and the Video Q-Former.

Everything here runs in float64. Tensors may carry any number of leading batch
dimensions; the last two axes are (tokens, channels).
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

DTYPE = torch.float64
INIT_STD = 0.02


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal samples redrawn until they fall within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def init_parameters(module: nn.Module, rng: np.random.Generator) -> None:
    """BERT/ViT-style init: truncated normal weights, zero biases, unit LayerNorm gains.

    Parameters are visited in ``named_parameters`` order so a given seed always
    yields the same weights.
    """
    norm_weights = {
        f"{name}.weight" if name else "weight"
        for name, sub in module.named_modules()
        if isinstance(sub, nn.LayerNorm)
    }
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name in norm_weights:
                param.fill_(1.0)
            elif name.endswith("bias"):
                param.zero_()
            else:
                param.copy_(torch.from_numpy(truncated_normal(rng, tuple(param.shape))))


class Attention(nn.Module):
    """Multi-head scaled dot-product attention with separate q/k/v/out projections."""

    def __init__(self, dim: int, heads: int, context_dim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim={dim} is not divisible by heads={heads}")
        context_dim = dim if context_dim is None else context_dim
        self.heads = heads
        self.head_dim = dim // heads
        self.query = nn.Linear(dim, dim, dtype=DTYPE)
        self.key = nn.Linear(context_dim, dim, dtype=DTYPE)
        self.value = nn.Linear(context_dim, dim, dtype=DTYPE)
        self.out = nn.Linear(dim, dim, dtype=DTYPE)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (..., n, dim) -> (..., heads, n, head_dim)
        return x.unflatten(-1, (self.heads, self.head_dim)).transpose(-3, -2)

    def forward(self, x: torch.Tensor, context: torch.Tensor | None = None):
        """Return ``(output, attention)``; attention has shape (..., heads, n_x, n_context)."""
        context = x if context is None else context
        q = self._split(self.query(x))
        k = self._split(self.key(context))
        v = self._split(self.value(context))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        mixed = (attn @ v).transpose(-3, -2).flatten(-2)
        return self.out(mixed), attn


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden, dim, dtype=DTYPE)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class PreNormBlock(nn.Module):
    """ViT encoder block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, dtype=DTYPE)
        self.mlp = FeedForward(dim, mlp_ratio * dim)

    def forward(self, x):
        h, _ = self.attn(self.norm1(x))
        x = x + h
        return x + self.mlp(self.norm2(x))


class QFormerBlock(nn.Module):
    """BERT-style (post-norm) query block.

    Queries self-attend, cross-attend to ``context``, then pass through a
    feed-forward sublayer; each sublayer is wrapped as LN(x + sublayer(x)).
    """

    def __init__(self, dim: int, heads: int, context_dim: int | None = None, mlp_ratio: int = 4):
        super().__init__()
        self.self_attn = Attention(dim, heads)
        self.norm1 = nn.LayerNorm(dim, dtype=DTYPE)
        self.cross_attn = Attention(dim, heads, context_dim)
        self.norm2 = nn.LayerNorm(dim, dtype=DTYPE)
        self.ffn = FeedForward(dim, mlp_ratio * dim)
        self.norm3 = nn.LayerNorm(dim, dtype=DTYPE)

    def forward(self, queries, context):
        """Return ``(queries, self_attention, cross_attention)``."""
        h, self_map = self.self_attn(queries)
        queries = self.norm1(queries + h)
        h, cross_map = self.cross_attn(queries, context)
        queries = self.norm2(queries + h)
        queries = self.norm3(queries + self.ffn(queries))
        return queries, self_map, cross_map
