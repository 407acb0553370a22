"""
Training setups and their gradient scopes.

- full_domain: train on whole simulation states
- crops: train on random crops
- context_full: per-region encode/decode with the context model, full backprop
- context_partial: each region's encoder pass enabled with probability p_enc,
  each decoder block per region with probability p_dec
- context_frozen_encoder: encoders never receive gradients; their outputs
  may be cached on disk
"""
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, Optional

import torch

from ..models.context import RegionMask
from ..validation import ValidationError, require_probability
from .losses import SIGMA_MIN

logger = logging.getLogger(__name__)


class TrainMode(Enum):
    FULL_DOMAIN = "full_domain"
    CROPS = "crops"
    CONTEXT_FULL = "context_full"
    CONTEXT_PARTIAL = "context_partial"
    CONTEXT_FROZEN_ENCODER = "context_frozen_encoder"

    @property
    def uses_context(self) -> bool:
        return self.value.startswith("context")


class Objective(Enum):
    MSE = "mse"
    FLOW = "flow"


@dataclass
class TrainSetup:
    mode: TrainMode = TrainMode.CROPS
    objective: Objective = Objective.MSE
    crop_size: int = 16
    region_size: Optional[int] = None
    batch: int = 4
    steps: int = 1000
    lr: float = 2e-4
    wd: float = 1e-15
    ema_decay: float = 0.999
    p_enc: float = 1.0
    p_dec: float = 1.0
    sigma_min: float = SIGMA_MIN
    checkpoint_every: int = 500
    log_every: int = 10
    cache_latents: bool = False

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = TrainMode(self.mode)
        if isinstance(self.objective, str):
            self.objective = Objective(self.objective)
        require_probability(self.p_enc, "p_enc")
        require_probability(self.p_dec, "p_dec")
        require_probability(self.ema_decay, "ema_decay")
        if self.mode.uses_context and self.region_size is None:
            raise ValidationError(f"{self.mode.value} needs a region_size", "region_size")
        if self.cache_latents and self.mode is not TrainMode.CONTEXT_FROZEN_ENCODER:
            raise ValidationError("latent caching only applies to the frozen-encoder setup", "cache_latents")
        if self.cache_latents and self.objective is Objective.FLOW:
            raise ValidationError("latent caching needs encoder inputs that do not change per step", "cache_latents")
        if self.batch < 1 or self.steps < 0 or self.checkpoint_every < 1:
            raise ValidationError("batch and checkpoint_every must be >= 1, steps >= 0", "batch")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["mode"] = self.mode.value
        data["objective"] = self.objective.value
        return data


def grad_scope(setup: TrainSetup, regions: int, blocks: int, generator: torch.Generator) -> RegionMask:
    """Draw which encoder passes and decoder blocks backpropagate this step."""
    mode = setup.mode
    if mode is TrainMode.CONTEXT_PARTIAL:
        enc = (torch.rand(regions, generator=generator) < setup.p_enc).tolist()
        dec = (torch.rand(regions, blocks, generator=generator) < setup.p_dec).tolist()
        return RegionMask(enc, dec)
    if mode is TrainMode.CONTEXT_FROZEN_ENCODER:
        return RegionMask([False] * regions, [[True] * blocks for _ in range(regions)])
    return RegionMask([True] * regions, [[True] * blocks for _ in range(regions)])
