"""Conditioning inputs and their embedding into one cond_dim vector."""
import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

TIME_SCALE = 1000.0


@dataclass
class Conditioning:
    """Physical parameters [B, P], optional class labels [B] and diffusion time [B]"""
    params: Optional[torch.Tensor] = None
    label: Optional[torch.Tensor] = None
    t: Optional[torch.Tensor] = None

    def with_time(self, t: torch.Tensor) -> 'Conditioning':
        return Conditioning(self.params, self.label, t)

    def index(self, idx) -> 'Conditioning':
        pick = lambda x: None if x is None else x[idx]
        return Conditioning(pick(self.params), pick(self.label), pick(self.t))


def timestep_embedding(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features of a scalar per batch entry, [B] -> [B, dim]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=x.dtype, device=x.device) / half
    )
    args = x[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ScalarEmbedder(nn.Module):
    """Frequency embedding of one scalar followed by a 2-layer MLP."""
    def __init__(self, cond_dim: int, scale: float = 1.0):
        super().__init__()
        self.cond_dim = cond_dim
        self.scale = scale
        self.mlp = nn.Sequential(
            nn.Linear(cond_dim, cond_dim),
            nn.SiLU(),
            nn.Linear(cond_dim, cond_dim),
        )

    def forward(self, x: Optional[torch.Tensor], batch: int, dtype: torch.dtype) -> torch.Tensor:
        if x is None:
            features = torch.zeros(batch, self.cond_dim, dtype=dtype)
        else:
            features = timestep_embedding(x.to(dtype) * self.scale, self.cond_dim)
        return self.mlp(features)


class ConditioningEmbedder(nn.Module):
    """Sums the embeddings of diffusion time, each physical parameter and the class label."""
    def __init__(self, cond_dim: int, num_params: int = 0, num_classes: int = 0):
        super().__init__()
        self.cond_dim = cond_dim
        self.num_params = num_params
        self.time = ScalarEmbedder(cond_dim, scale=TIME_SCALE)
        self.params = nn.ModuleList([ScalarEmbedder(cond_dim) for _ in range(num_params)])
        self.labels = nn.Embedding(num_classes, cond_dim) if num_classes > 0 else None

    def forward(self, cond: Optional[Conditioning], batch: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        cond = cond or Conditioning()
        e = self.time(cond.t, batch, dtype)
        for i, embedder in enumerate(self.params):
            value = None if cond.params is None else cond.params[:, i]
            e = e + embedder(value, batch, dtype)
        if self.labels is not None and cond.label is not None:
            e = e + self.labels(cond.label.long()).to(dtype)
        return e
