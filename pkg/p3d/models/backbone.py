"""
The P3D backbone: convolutional encoder, windowed transformer at the
bottleneck, and a mirrored convolutional decoder with U-shaped skips.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
from torch.func import functional_call

from ..numerics import ops
from ..validation import ValidationError, require_rank
from .attention import WindowedMSA
from .blocks import Conv3, Downsample, EncoderBlock, Patchify, Unpatchify, Upsample
from .conditioning import Conditioning, ConditioningEmbedder
from .config import ModelConfig
from .transformer import TransformerBlock

logger = logging.getLogger(__name__)

BLOCKS_PER_LEVEL = 2


@dataclass
class BackboneState:
    """Bottleneck tokens [B, T, D] and the conv features saved before each downsample"""
    tokens: torch.Tensor
    grid: Tuple[int, int, int]
    residuals: List[torch.Tensor] = field(default_factory=list)

    def detach(self) -> 'BackboneState':
        return BackboneState(self.tokens.detach(), self.grid, [r.detach() for r in self.residuals])


class P3D(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        dims = c.embed_dims
        self.embedder = ConditioningEmbedder(c.cond_dim, c.num_params, c.num_classes)

        self.stem = Conv3(c.in_channels, dims[0], pad_mode=c.pad_mode)
        self.encoder_levels = nn.ModuleList([
            nn.ModuleList([EncoderBlock(dims[i], c.groups, c.cond_dim, c.pad_mode) for _ in range(BLOCKS_PER_LEVEL)])
            for i in range(c.conv_downs)
        ])
        self.downsamples = nn.ModuleList([
            Downsample(dims[i], dims[i + 1], c.pad_mode) for i in range(c.conv_downs)
        ])
        self.patchify = Patchify(dims[-1], c.patch, c.transformer_dim)
        self.transformer = nn.ModuleList([
            TransformerBlock(c.transformer_dim, c.cond_dim, WindowedMSA(c.transformer_dim, c.heads, c.window))
            for _ in range(c.depth)
        ])
        self.unpatchify = Unpatchify(c.transformer_dim, c.patch, dims[-1])
        # decoder levels run from the bottleneck outwards
        self.upsamples = nn.ModuleList([
            Upsample(dims[i + 1], dims[i], c.pad_mode) for i in reversed(range(c.conv_downs))
        ])
        self.decoder_levels = nn.ModuleList([
            nn.ModuleList([EncoderBlock(dims[i], c.groups, c.cond_dim, c.pad_mode) for _ in range(BLOCKS_PER_LEVEL)])
            for i in reversed(range(c.conv_downs))
        ])
        self.head = Conv3(dims[0], c.out_channels, pad_mode=c.pad_mode)

    @property
    def decoder_block_count(self) -> int:
        return sum(len(level) for level in self.decoder_levels)

    def encoder_modules(self) -> List[nn.Module]:
        return [self.stem, self.encoder_levels, self.downsamples, self.patchify, self.transformer]

    def encoder_parameters(self) -> Iterator[nn.Parameter]:
        for module in self.encoder_modules():
            yield from module.parameters()

    def embed(self, cond: Optional[Conditioning], batch: int, dtype: torch.dtype) -> torch.Tensor:
        return self.embedder(cond, batch, dtype)

    def assemble_input(self, u_in: Optional[torch.Tensor], x_t: Optional[torch.Tensor]) -> torch.Tensor:
        """Channel concatenation of the conditioning state and the noisy state."""
        parts = [p for p in (u_in, x_t) if p is not None]
        if not parts:
            raise ValidationError("forward needs u_in, x_t or both", "u_in")
        for p in parts:
            require_rank(p, 5, "input")
        x = parts[0] if len(parts) == 1 else ops.concat(parts, dim=1)
        if x.shape[1] != self.config.in_channels:
            raise ValidationError(
                f"model expects {self.config.in_channels} input channels, got {x.shape[1]}", "in_channels"
            )
        return x

    def encode(self, x: torch.Tensor, e: torch.Tensor) -> BackboneState:
        grid = self.config.token_grid(tuple(x.shape[2:]))
        h = self.stem(x)
        residuals = []
        for blocks, down in zip(self.encoder_levels, self.downsamples):
            for block in blocks:
                h = block(h, e)
            residuals.append(h)
            h = down(h)
        tokens, _ = self.patchify(h)
        return BackboneState(tokens, grid, residuals)

    def process(self, state: BackboneState, e: torch.Tensor) -> BackboneState:
        """Windowed transformer stack at the bottleneck."""
        tokens = state.tokens
        for block in self.transformer:
            tokens = block(tokens, e, state.grid)
        return BackboneState(tokens, state.grid, state.residuals)

    def decode(
        self,
        state: BackboneState,
        e: torch.Tensor,
        region_mods: Optional[torch.Tensor] = None,
        block_mask: Optional[Sequence[bool]] = None,
    ) -> torch.Tensor:
        """Mirror of the encoder.

        region_mods are cond offsets added to e in the decoder blocks, either
        one [B, cond_dim] vector or a per-region grid [B, cond_dim, Rx, Ry, Rz].
        Blocks whose mask entry is False run with detached parameters, so they
        pass gradients to their inputs but receive none.
        """
        if len(state.residuals) != len(self.upsamples):
            raise ValidationError(
                f"expected {len(self.upsamples)} residuals, got {len(state.residuals)}", "residuals"
            )
        if block_mask is not None and len(block_mask) != self.decoder_block_count:
            raise ValidationError(
                f"block mask needs {self.decoder_block_count} entries, got {len(block_mask)}", "block_mask"
            )
        e_dec = e
        if region_mods is not None:
            e_dec = e[:, :, None, None, None] + region_mods if region_mods.dim() == 5 else e + region_mods

        h = self.unpatchify(state.tokens, state.grid)
        k = 0
        for up, blocks, residual in zip(self.upsamples, self.decoder_levels, reversed(state.residuals)):
            h = up(h)
            if h.shape != residual.shape:
                raise ValidationError(
                    f"residual shape {tuple(residual.shape)} does not match decoder features {tuple(h.shape)}",
                    "residuals",
                )
            h = h + residual
            for block in blocks:
                if block_mask is None or block_mask[k]:
                    h = block(h, e_dec)
                else:
                    frozen = {name: p.detach() for name, p in block.named_parameters()}
                    h = functional_call(block, frozen, (h, e_dec))
                k += 1
        return self.head(h)

    def forward(
        self,
        u_in: Optional[torch.Tensor],
        x_t: Optional[torch.Tensor] = None,
        cond: Optional[Conditioning] = None,
    ) -> torch.Tensor:
        x = self.assemble_input(u_in, x_t)
        e = self.embed(cond, x.shape[0], x.dtype)
        state = self.process(self.encode(x, e), e)
        return self.decode(state, e)
