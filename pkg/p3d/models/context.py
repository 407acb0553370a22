"""
Global context model linking the bottleneck tokens of all regions.

Each region of a domain is encoded independently by the backbone. Its
bottleneck tokens are embedded as latent tokens, concatenated after one
region token per region (regions first), and processed by a stack of
globally attending adaLN transformer layers. Processed latents are added
back onto the decoder input; processed region tokens become per-region
offsets of the decoder conditioning.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from ..numerics import ops
from ..validation import ValidationError, require_divisible
from .attention import MultiHeadAttention
from .backbone import P3D, BackboneState
from .conditioning import Conditioning
from .transformer import LN_EPS, TransformerBlock

logger = logging.getLogger(__name__)

AttentionKernel = Callable[[torch.Tensor, torch.Tensor, torch.Tensor, Optional[torch.Tensor]], torch.Tensor]
_KERNELS: Dict[str, AttentionKernel] = {"dense": ops.attention}


def register_attention_kernel(name: str, kernel: AttentionKernel) -> None:
    """Make a sequence attention kernel selectable by ContextConfig.kernel."""
    _KERNELS[name] = kernel


def get_attention_kernel(name: str) -> AttentionKernel:
    if name not in _KERNELS:
        raise ValidationError(f"unknown attention kernel '{name}'; registered: {sorted(_KERNELS)}", "kernel")
    return _KERNELS[name]


@dataclass
class ContextConfig:
    layers: int = 6
    latent_dim: int = 128
    heads: int = 4
    kernel: str = "dense"

    def __post_init__(self):
        if self.layers < 1:
            raise ValidationError(f"context needs at least one layer, got {self.layers}", "layers")
        if self.latent_dim % 8 != 0:
            raise ValidationError(f"latent_dim must be a multiple of 8, got {self.latent_dim}", "latent_dim")
        if self.latent_dim % self.heads != 0:
            raise ValidationError(f"latent_dim {self.latent_dim} not divisible by {self.heads} heads", "heads")
        get_attention_kernel(self.kernel)


@dataclass
class RegionLayout:
    """Partition of a domain into equal regions, ordered x-major."""
    domain: Tuple[int, int, int]
    region: Tuple[int, int, int]
    token_spacing: int = 1

    def __post_init__(self):
        self.domain = tuple(int(n) for n in self.domain)
        self.region = tuple(int(n) for n in self.region)
        for n, r in zip(self.domain, self.region):
            if r <= 0 or n % r != 0:
                raise ValidationError(f"domain {self.domain} is not tiled by regions {self.region}", "region")
        require_divisible(self.region, self.token_spacing, "region")

    @classmethod
    def cubic(cls, domain: Sequence[int], size: int, token_spacing: int = 1) -> 'RegionLayout':
        return cls(tuple(domain), (size, size, size), token_spacing)

    @property
    def grid(self) -> Tuple[int, int, int]:
        return tuple(n // r for n, r in zip(self.domain, self.region))

    @property
    def count(self) -> int:
        gx, gy, gz = self.grid
        return gx * gy * gz

    @property
    def region_tokens_grid(self) -> Tuple[int, int, int]:
        return tuple(r // self.token_spacing for r in self.region)

    @property
    def tokens_per_region(self) -> int:
        tx, ty, tz = self.region_tokens_grid
        return tx * ty * tz

    def region_index(self, i: int) -> Tuple[int, int, int]:
        gx, gy, gz = self.grid
        return (i // (gy * gz), (i // gz) % gy, i % gz)

    def slices(self, i: int) -> Tuple[slice, slice, slice]:
        return tuple(slice(c * r, (c + 1) * r) for c, r in zip(self.region_index(i), self.region))

    def split(self, field: torch.Tensor) -> List[torch.Tensor]:
        """[B, C, X, Y, Z] -> one crop per region, region order."""
        if tuple(field.shape[2:]) != self.domain:
            raise ValidationError(f"field extents {tuple(field.shape[2:])} != layout domain {self.domain}", "field")
        return [field[(slice(None), slice(None)) + self.slices(i)] for i in range(self.count)]

    def assemble(self, crops: Sequence[torch.Tensor]) -> torch.Tensor:
        if len(crops) != self.count:
            raise ValidationError(f"expected {self.count} crops, got {len(crops)}", "crops")
        gx, gy, gz = self.grid
        rows = []
        for ix in range(gx):
            cols = []
            for iy in range(gy):
                start = (ix * gy + iy) * gz
                cols.append(torch.cat(list(crops[start:start + gz]), dim=4))
            rows.append(torch.cat(cols, dim=3))
        return torch.cat(rows, dim=2)

    def region_coordinates(self) -> np.ndarray:
        return np.array([self.region_index(i) for i in range(self.count)], dtype=np.float64)

    def token_coordinates(self) -> np.ndarray:
        """Global token coordinates for all regions, [R·Tr, 3], region-major."""
        tx, ty, tz = self.region_tokens_grid
        local = np.stack(np.meshgrid(np.arange(tx), np.arange(ty), np.arange(tz), indexing="ij"), -1).reshape(-1, 3)
        offsets = self.region_coordinates() * np.array([tx, ty, tz])
        return (offsets[:, None, :] + local[None]).reshape(-1, 3).astype(np.float64)


def sinusoidal_positions(coords: np.ndarray, dim_per_axis: int, max_period: float = 10000.0) -> torch.Tensor:
    """Concatenated per-axis sinusoids of 3-D coordinates, [N, 3·dim_per_axis]."""
    half = dim_per_axis // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    parts = []
    for axis in range(3):
        args = coords[:, axis:axis + 1] * freqs[None]
        parts.extend([np.cos(args), np.sin(args)])
    return torch.from_numpy(np.concatenate(parts, axis=1))


class FrequencyEmbedding(nn.Module):
    """Fixed sinusoids of a 3-D coordinate projected to latent_dim."""
    def __init__(self, latent_dim: int):
        super().__init__()
        self.dim_per_axis = latent_dim // 4
        self.proj = nn.Linear(3 * self.dim_per_axis, latent_dim)

    def forward(self, coords: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
        return self.proj(sinusoidal_positions(coords, self.dim_per_axis).to(dtype))


class GlobalAttention(MultiHeadAttention):
    def __init__(self, dim: int, heads: int, kernel: str = "dense"):
        super().__init__(dim, heads)
        self.kernel_name = kernel

    def forward(self, x: torch.Tensor, grid=None) -> torch.Tensor:
        return self.attend(x, None, get_attention_kernel(self.kernel_name))


@dataclass
class ContextOutput:
    latents: torch.Tensor
    region_tokens: torch.Tensor
    region_offsets: torch.Tensor


class ContextModel(nn.Module):
    def __init__(self, config: ContextConfig, token_dim: int, cond_dim: int):
        super().__init__()
        self.config = config
        d = config.latent_dim
        self.latent_in = nn.Linear(token_dim, d, bias=False)
        self.latent_pos = FrequencyEmbedding(d)
        self.region_base = nn.Parameter(torch.zeros(d))
        nn.init.normal_(self.region_base, std=0.02)
        self.region_pos = FrequencyEmbedding(d)
        self.layers = nn.ModuleList([
            TransformerBlock(d, cond_dim, GlobalAttention(d, config.heads, config.kernel))
            for _ in range(config.layers)
        ])
        self.norm_out = nn.LayerNorm(d, eps=LN_EPS)
        self.latent_out = nn.Linear(d, token_dim)
        self.region_mlp = nn.Sequential(nn.Linear(d, cond_dim), nn.SiLU(), nn.Linear(cond_dim, cond_dim))
        for layer in (self.latent_out, self.region_mlp[-1]):
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def embed_latents(self, bottleneck: torch.Tensor, layout: RegionLayout) -> torch.Tensor:
        """[B, R·Tr, D] bottleneck tokens -> latent tokens with positional embedding."""
        expected = layout.count * layout.tokens_per_region
        if bottleneck.dim() != 3 or bottleneck.shape[1] != expected:
            raise ValidationError(
                f"layout expects {expected} bottleneck tokens, got shape {tuple(bottleneck.shape)}", "bottleneck"
            )
        pos = self.latent_pos(layout.token_coordinates(), bottleneck.dtype)
        return self.latent_in(bottleneck) + pos[None]

    def make_region_tokens(self, layout: RegionLayout, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return self.region_base.to(dtype)[None] + self.region_pos(layout.region_coordinates(), dtype)

    def region_modulation(self, region_tokens: torch.Tensor) -> torch.Tensor:
        """Region tokens [..., latent_dim] -> cond offsets [..., cond_dim]."""
        return self.region_mlp(region_tokens)

    def forward(self, latents: torch.Tensor, region_tokens: torch.Tensor, e: torch.Tensor) -> ContextOutput:
        b = latents.shape[0]
        r = region_tokens.shape[-2]
        if region_tokens.dim() == 2:
            region_tokens = region_tokens[None].expand(b, -1, -1)
        seq = torch.cat([region_tokens, latents], dim=1)
        for layer in self.layers:
            seq = layer(seq, e)
        regions_out, latents_out = seq[:, :r], seq[:, r:]
        return ContextOutput(
            latents=self.latent_out(self.norm_out(latents_out)),
            region_tokens=regions_out,
            region_offsets=self.region_modulation(regions_out),
        )


def inject_context(tokens: torch.Tensor, latents: torch.Tensor) -> torch.Tensor:
    """Additive skip of processed latents onto decoder input tokens."""
    if tokens.shape != latents.shape:
        raise ValidationError(
            f"context latents {tuple(latents.shape)} do not match decoder tokens {tuple(tokens.shape)}", "latents"
        )
    return tokens + latents


@dataclass
class RegionMask:
    """Which per-region encoder passes and decoder blocks receive gradients"""
    encoders: List[bool]
    decoder_blocks: List[List[bool]]


class ContextualP3D(nn.Module):
    """Backbone plus context model, run region by region."""
    def __init__(self, backbone: P3D, config: ContextConfig):
        super().__init__()
        self.backbone = backbone
        self.context_config = config
        self.context = ContextModel(config, backbone.config.transformer_dim, backbone.config.cond_dim)

    def layout_for(self, domain: Sequence[int], region_size: int) -> RegionLayout:
        return RegionLayout.cubic(domain, region_size, self.backbone.config.token_spacing)

    def encode_regions(
        self,
        crops: Sequence[torch.Tensor],
        e: torch.Tensor,
        mask: Optional[RegionMask] = None,
        cache=None,
        crop_keys: Optional[Sequence[str]] = None,
    ) -> List[BackboneState]:
        states = []
        for i, crop in enumerate(crops):
            enabled = mask is None or mask.encoders[i]
            key = crop_keys[i] if crop_keys is not None else None
            state = cache.get(key) if (cache is not None and key is not None and not enabled) else None
            if state is None:
                if enabled:
                    state = self.backbone.process(self.backbone.encode(crop, e), e)
                else:
                    with torch.no_grad():
                        state = self.backbone.process(self.backbone.encode(crop, e), e)
                if cache is not None and key is not None and not enabled:
                    cache.put(key, state)
            states.append(state)
        return states

    def forward_regions(
        self,
        u_in: Optional[torch.Tensor],
        x_t: Optional[torch.Tensor],
        cond: Optional[Conditioning],
        layout: RegionLayout,
        mask: Optional[RegionMask] = None,
        cache=None,
        crop_keys: Optional[Sequence[str]] = None,
    ) -> torch.Tensor:
        """Per-crop encode, global context, per-crop decode with region offsets, reassemble."""
        x = self.backbone.assemble_input(u_in, x_t)
        e = self.backbone.embed(cond, x.shape[0], x.dtype)
        states = self.encode_regions(layout.split(x), e, mask, cache, crop_keys)

        bottleneck = torch.cat([s.tokens for s in states], dim=1)
        latents = self.context.embed_latents(bottleneck, layout)
        regions = self.context.make_region_tokens(layout, x.dtype)
        out = self.context(latents, regions, e)

        per_region = layout.tokens_per_region
        crops_out = []
        for i, state in enumerate(states):
            skip = out.latents[:, i * per_region:(i + 1) * per_region]
            decoded = BackboneState(inject_context(state.tokens, skip), state.grid, state.residuals)
            block_mask = None if mask is None else mask.decoder_blocks[i]
            crops_out.append(
                self.backbone.decode(decoded, e, region_mods=out.region_offsets[:, i], block_mask=block_mask)
            )
        return layout.assemble(crops_out)

    def forward(self, u_in, x_t=None, cond=None, layout: Optional[RegionLayout] = None, **kwargs) -> torch.Tensor:
        if layout is None:
            raise ValidationError("ContextualP3D needs a region layout", "layout")
        return self.forward_regions(u_in, x_t, cond, layout, **kwargs)
