"""
Convolutional building blocks of the encoder and decoder.
"""
from typing import Optional

import torch
import torch.nn as nn

from ..numerics import ops


class Conv3(nn.Module):
    """Kernel-3 convolution honouring the model's padding mode."""
    def __init__(self, cin: int, cout: int, stride: int = 1, pad_mode: str = "zero", kernel: int = 3):
        super().__init__()
        self.stride = stride
        self.pad_mode = pad_mode
        conv = nn.Conv3d(cin, cout, kernel)
        self.weight = conv.weight
        self.bias = conv.bias

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.conv3(x, self.weight, self.bias, stride=self.stride, pad_mode=self.pad_mode)

    def zero_(self) -> 'Conv3':
        nn.init.zeros_(self.weight)
        nn.init.zeros_(self.bias)
        return self


def expand_embedding(e: torch.Tensor, spatial) -> torch.Tensor:
    """Broadcast [B, D] or a per-region grid [B, D, Rx, Ry, Rz] to [B, D, X, Y, Z]."""
    if e.dim() == 2:
        return e[:, :, None, None, None]
    for axis, n in enumerate(spatial):
        regions = e.shape[2 + axis]
        e = e.repeat_interleave(n // regions, dim=2 + axis)
    return e


class EncoderBlock(nn.Module):
    """x + conv(GELU(mod(GN(conv(GELU(GN(x)))), e))), shared by encoder and decoder.

    The modulation projection and the closing convolution start at zero, so a
    fresh block is the identity.
    """
    def __init__(self, channels: int, groups: int, cond_dim: int, pad_mode: str = "zero"):
        super().__init__()
        self.groups = groups
        self.norm1 = nn.GroupNorm(groups, channels, eps=ops.NORM_EPS)
        self.conv1 = Conv3(channels, channels, pad_mode=pad_mode)
        self.norm2 = nn.GroupNorm(groups, channels, eps=ops.NORM_EPS)
        self.modulation = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, 2 * channels))
        self.conv2 = Conv3(channels, channels, pad_mode=pad_mode).zero_()
        nn.init.zeros_(self.modulation[1].weight)
        nn.init.zeros_(self.modulation[1].bias)

    def _modulate(self, h: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        if e.dim() == 2:
            scale, shift = self.modulation(e).chunk(2, dim=-1)
        else:
            mod = self.modulation(e.movedim(1, -1)).movedim(-1, 1)
            scale, shift = mod.chunk(2, dim=1)
        spatial = h.shape[2:]
        return h * (1 + expand_embedding(scale, spatial)) + expand_embedding(shift, spatial)

    def forward(self, x: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        h = ops.group_norm(x, self.groups, self.norm1.weight, self.norm1.bias)
        h = self.conv1(ops.gelu(h))
        h = ops.group_norm(h, self.groups, self.norm2.weight, self.norm2.bias)
        h = self.conv2(ops.gelu(self._modulate(h, e)))
        return x + h


class Downsample(nn.Module):
    def __init__(self, cin: int, cout: int, pad_mode: str = "zero"):
        super().__init__()
        self.conv = Conv3(cin, cout, stride=2, pad_mode=pad_mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    """Channel expansion to 8·cout followed by a factor-2 pixel shuffle."""
    def __init__(self, cin: int, cout: int, pad_mode: str = "zero"):
        super().__init__()
        self.conv = Conv3(cin, 8 * cout, pad_mode=pad_mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.pixel_shuffle_3d(self.conv(x), 2)


class Patchify(nn.Module):
    """Linear map of patch³ feature voxels to one token."""
    def __init__(self, channels: int, patch: int, dim: int):
        super().__init__()
        self.patch = patch
        self.proj = nn.Linear(channels * patch ** 3, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b = x.shape[0]
        h = ops.pixel_unshuffle_3d(x, self.patch)
        grid = h.shape[2:]
        tokens = h.reshape(b, h.shape[1], -1).transpose(1, 2)
        return self.proj(tokens), grid


class Unpatchify(nn.Module):
    """Inverse of Patchify: one token back to patch³ feature voxels."""
    def __init__(self, dim: int, patch: int, channels: int):
        super().__init__()
        self.patch = patch
        self.proj = nn.Linear(dim, channels * patch ** 3)

    def forward(self, tokens: torch.Tensor, grid) -> torch.Tensor:
        b = tokens.shape[0]
        h = self.proj(tokens).transpose(1, 2).reshape(b, -1, *grid)
        return ops.pixel_shuffle_3d(h, self.patch)
