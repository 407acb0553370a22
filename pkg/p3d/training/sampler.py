"""Explicit Euler integration of the learned flow from noise to data."""
import logging
from typing import Callable, Optional, Sequence

import torch

from ..models.conditioning import Conditioning
from ..validation import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_STEPS = 100


@torch.no_grad()
def euler_sample(
    model: Callable,
    u_in: Optional[torch.Tensor],
    cond: Optional[Conditioning],
    steps: int = DEFAULT_STEPS,
    generator: Optional[torch.Generator] = None,
    shape: Optional[Sequence[int]] = None,
    x0: Optional[torch.Tensor] = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """x ← x + Δt·model(u_in, x, c(t)) for t = k/steps, starting at x_0 ~ N(0, I)."""
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}", "steps")
    if x0 is None:
        if shape is None:
            raise ValidationError("euler_sample needs a shape or an initial x0", "shape")
        x0 = torch.randn(tuple(shape), generator=generator, dtype=dtype)
    cond = cond or Conditioning()
    x = x0
    dt = 1.0 / steps
    for k in range(steps):
        t = torch.full((x.shape[0],), k / steps, dtype=x.dtype)
        x = x + dt * model(u_in, x, cond.with_time(t))
    return x
