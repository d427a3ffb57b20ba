"""Mistake classification layer and logit aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .layers import DTYPE

AGGREGATORS = ("max", "mean")


def sigmoid(x: float) -> float:
    """Logistic function, split on sign so neither branch overflows."""
    x = float(x)
    if math.isnan(x):
        raise ValueError("sigmoid of NaN")
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@dataclass(frozen=True)
class MistakeLogits:
    m: np.ndarray
    aggregated_logit: float
    probability: float


def aggregate(logits: torch.Tensor, how: str = "max") -> torch.Tensor:
    if how == "max":
        return logits.max(dim=-1).values
    if how == "mean":
        return logits.mean(dim=-1)
    raise ValueError(f"unknown aggregator {how!r}; expected one of {AGGREGATORS}")


class MistakeHead(nn.Module):
    """Linear map d2 -> 1 applied to every query row."""

    def __init__(self, d2: int, aggregator: str = "max"):
        super().__init__()
        if aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {aggregator!r}; expected one of {AGGREGATORS}")
        self.aggregator = aggregator
        self.linear = nn.Linear(d2, 1, dtype=DTYPE)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        """(..., t_q, d2) -> per-query logits (..., t_q)."""
        if f.shape[-1] != self.linear.in_features:
            raise ValueError(f"feature width {f.shape[-1]} does not match d2={self.linear.in_features}")
        return self.linear(f).squeeze(-1)

    def classify(self, f) -> MistakeLogits:
        f = torch.as_tensor(np.asarray(f), dtype=DTYPE)
        if f.ndim != 2:
            raise ValueError(f"expected a (t_q, d2) matrix, got shape {tuple(f.shape)}")
        with torch.no_grad():
            m = self(f)
            agg = float(aggregate(m, self.aggregator))
        return MistakeLogits(m=m.numpy(), aggregated_logit=agg, probability=sigmoid(agg))
