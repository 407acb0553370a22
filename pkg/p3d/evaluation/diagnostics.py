"""
Model size diagnostics: parameter counts and a per-op multiply-add tally.

The tally counts convolutions, linear layers and the two attention matmuls;
normalization and activations are ignored.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence

import pandas as pd
import torch
import torch.nn as nn

from ..models.attention import WindowedMSA, effective_window
from ..models.backbone import P3D
from ..models.blocks import Conv3
from ..models.config import preset

logger = logging.getLogger(__name__)


def parameter_count(model: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


class MacCounter:
    """Forward hooks accumulating multiply-adds per module type."""
    def __init__(self, model: nn.Module):
        self.model = model
        self.by_kind: Dict[str, int] = {"conv": 0, "linear": 0, "attention": 0}
        self._handles = []

    def _conv(self, module: Conv3, inputs, output):
        cin, k = module.weight.shape[1], module.weight.shape[2]
        self.by_kind["conv"] += output.numel() * cin * k ** 3

    def _linear(self, module: nn.Linear, inputs, output):
        self.by_kind["linear"] += output.numel() * module.in_features

    def _windowed(self, module: WindowedMSA, inputs, output):
        x, grid = inputs[0], inputs[1]
        b, t, d = x.shape
        window_tokens = math.prod(effective_window(module.window, grid))
        # q·kᵀ and attn·v
        self.by_kind["attention"] += 2 * b * t * window_tokens * d

    def __enter__(self) -> 'MacCounter':
        for module in self.model.modules():
            if isinstance(module, Conv3):
                self._handles.append(module.register_forward_hook(self._conv))
            elif isinstance(module, nn.Linear):
                self._handles.append(module.register_forward_hook(self._linear))
            elif isinstance(module, WindowedMSA):
                self._handles.append(module.register_forward_hook(self._windowed))
        return self

    def __exit__(self, *exc) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles = []

    @property
    def total(self) -> int:
        return sum(self.by_kind.values())


def count_macs(model: P3D, extents: Sequence[int] = (64, 64, 64), batch: int = 1) -> Dict[str, int]:
    """Multiply-adds of one forward pass at the given spatial extents."""
    c = model.config
    x = torch.zeros((batch, c.in_channels) + tuple(extents))
    with torch.no_grad(), MacCounter(model) as counter:
        model(x)
    return {**counter.by_kind, "total": counter.total}


def preset_report(
    names: Sequence[str] = ("S", "B", "L"),
    extents: Optional[Sequence[int]] = None,
) -> pd.DataFrame:
    """One row per preset: parameter count and, when extents are given, multiply-adds."""
    rows: List[dict] = []
    for name in names:
        model = P3D(preset(name))
        row = {"preset": name, "params": parameter_count(model)}
        if extents is not None:
            row["macs"] = count_macs(model, extents)["total"]
        logger.info(f"preset {name}: {row['params']:,} parameters")
        rows.append(row)
    return pd.DataFrame(rows)
