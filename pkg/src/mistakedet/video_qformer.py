"""Temporal Q-Former: learnable queries attend over a window of frame features."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .layers import DTYPE, QFormerBlock, init_parameters


@dataclass(frozen=True)
class VideoQFormerConfig:
    t_q: int = 8
    d2: int = 64
    layers: int = 2
    heads: int = 4
    max_positions: int = 8
    input_dim: int = 64
    use_temporal_positions: bool = True
    context_norm: bool = True

    def __post_init__(self):
        for name in ("t_q", "d2", "layers", "heads", "max_positions", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d2 % self.heads:
            raise ValueError(f"d2 {self.d2} is not divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)


class VideoQFormer(nn.Module):
    def __init__(self, config: VideoQFormerConfig):
        super().__init__()
        self.config = config
        self.query_bank = nn.Parameter(torch.zeros(config.t_q, config.d2, dtype=DTYPE))
        self.input_proj = nn.Linear(config.input_dim, config.d2, dtype=DTYPE)
        if config.use_temporal_positions:
            self.temporal_pos = nn.Parameter(torch.zeros(config.max_positions, config.d2, dtype=DTYPE))
        else:
            self.register_parameter("temporal_pos", None)
        self.context_norm = nn.LayerNorm(config.d2, dtype=DTYPE) if config.context_norm else None
        self.blocks = nn.ModuleList(QFormerBlock(config.d2, config.heads) for _ in range(config.layers))

    def reset_parameters(self, rng: np.random.Generator) -> None:
        init_parameters(self, rng)

    def forward(self, v: torch.Tensor, return_attention: bool = False):
        """(..., frames, d1) -> (..., t_q, d2).

        With ``return_attention`` also returns a list with one
        ``{"self": ..., "cross": ...}`` dict of softmax maps per block.
        """
        frames, width = v.shape[-2:]
        if width != self.config.input_dim:
            raise ValueError(f"feature width {width} does not match input_dim {self.config.input_dim}")
        if frames > self.config.max_positions:
            raise ValueError(f"{frames} frames exceed max_positions={self.config.max_positions}")
        if frames < 1:
            raise ValueError("feature sequence is empty")
        context = self.input_proj(v)
        if self.temporal_pos is not None:
            # under-full windows use the first `frames` slots
            context = context + self.temporal_pos[:frames]
        if self.context_norm is not None:
            context = self.context_norm(context)
        queries = self.query_bank.expand(*v.shape[:-2], -1, -1)
        maps = []
        for block in self.blocks:
            queries, self_map, cross_map = block(queries, context)
            maps.append({"self": self_map, "cross": cross_map})
        return (queries, maps) if return_attention else queries


def parameter_groups(module: nn.Module) -> dict[str, tuple[int, ...]]:
    """Stable name -> shape listing of every learnable array, each listed once."""
    return {name: tuple(p.shape) for name, p in module.named_parameters()}
