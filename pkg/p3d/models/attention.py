"""
Windowed multi-head self-attention over a 3-D token grid.

Tokens are partitioned into non-overlapping window³ cubes without shifting;
inside each cube attention is dense and carries a relative position bias
regressed from log-spaced 3-D offsets.
"""
import math
from typing import Callable, Dict, Sequence, Tuple

import torch
import torch.nn as nn

from ..numerics import ops
from ..validation import ValidationError

BIAS_HIDDEN = 64


def effective_window(window: int, grid: Sequence[int]) -> Tuple[int, int, int]:
    """Per-axis window, clamped to the grid and checked for divisibility."""
    sizes = tuple(min(window, n) for n in grid)
    for n, w in zip(grid, sizes):
        if n % w != 0:
            raise ValidationError(f"token grid {tuple(grid)} not divisible by window {sizes}", "grid")
    return sizes


def window_partition(x: torch.Tensor, grid: Sequence[int], window: Sequence[int]) -> torch.Tensor:
    """[B, T, D] -> [B·nW, wx·wy·wz, D]; tokens are in x-major raster order."""
    b, _, d = x.shape
    (tx, ty, tz), (wx, wy, wz) = grid, window
    x = x.view(b, tx // wx, wx, ty // wy, wy, tz // wz, wz, d)
    x = x.permute(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(-1, wx * wy * wz, d)


def window_reverse(windows: torch.Tensor, grid: Sequence[int], window: Sequence[int], batch: int) -> torch.Tensor:
    (tx, ty, tz), (wx, wy, wz) = grid, window
    d = windows.shape[-1]
    x = windows.view(batch, tx // wx, ty // wy, tz // wz, wx, wy, wz, d)
    x = x.permute(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(batch, tx * ty * tz, d)


def log_relative_offsets(window: Sequence[int], dtype=torch.float32) -> torch.Tensor:
    """sign(Δ)·log2(1+|Δ|)/log2(w) per axis for all token pairs of a window, [N, N, 3]."""
    axes = [torch.arange(w) for w in window]
    coords = torch.stack(torch.meshgrid(*axes, indexing="ij"), dim=-1).reshape(-1, 3)
    delta = (coords[:, None, :] - coords[None, :, :]).to(dtype)
    scale = torch.tensor([math.log2(w) if w > 1 else 1.0 for w in window], dtype=dtype)
    return torch.sign(delta) * torch.log2(1.0 + delta.abs()) / scale


class RelativePositionBias(nn.Module):
    """MLP from log-spaced offsets to one additive bias per head."""
    def __init__(self, heads: int, hidden: int = BIAS_HIDDEN):
        super().__init__()
        self.mlp = nn.Sequential(nn.Linear(3, hidden), nn.ReLU(), nn.Linear(hidden, heads))
        self._offsets: Dict[Tuple[int, int, int], torch.Tensor] = {}

    def forward(self, window: Tuple[int, int, int], dtype: torch.dtype) -> torch.Tensor:
        key = tuple(window)
        offsets = self._offsets.get(key)
        if offsets is None or offsets.dtype != dtype:
            offsets = log_relative_offsets(window, dtype)
            self._offsets[key] = offsets
        return self.mlp(offsets).permute(2, 0, 1)


class MultiHeadAttention(nn.Module):
    """qkv projection, per-head dense attention and output projection."""
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def attend(self, x: torch.Tensor, bias=None, kernel: Callable = ops.attention) -> torch.Tensor:
        b, t, d = x.shape
        qkv = self.qkv(x).view(b, t, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        out = kernel(qkv[0], qkv[1], qkv[2], bias)
        return self.proj(out.transpose(1, 2).reshape(b, t, d))


class WindowedMSA(MultiHeadAttention):
    def __init__(self, dim: int, heads: int, window: int):
        super().__init__(dim, heads)
        self.window = window
        self.bias = RelativePositionBias(heads)

    def forward(self, x: torch.Tensor, grid: Sequence[int]) -> torch.Tensor:
        b, t, _ = x.shape
        if t != grid[0] * grid[1] * grid[2]:
            raise ValidationError(f"{t} tokens do not fill grid {tuple(grid)}", "grid")
        window = effective_window(self.window, grid)
        windows = window_partition(x, grid, window)
        out = self.attend(windows, self.bias(window, x.dtype))
        return window_reverse(out, grid, window, b)
