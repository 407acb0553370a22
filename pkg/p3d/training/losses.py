"""Supervised and flow-matching objectives."""
from dataclasses import dataclass

import torch

from ..validation import ValidationError, require_same_shape

SIGMA_MIN = 1e-4


@dataclass
class FlowState:
    """A point on the probability path between noise and data"""
    x_t: torch.Tensor
    t: torch.Tensor
    sigma_min: float
    eps: torch.Tensor


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    require_same_shape(pred, target, "pred")
    return torch.mean((pred - target) ** 2)


def _broadcast_time(t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype)
    if t.dim() == 0:
        return t
    return t.view(-1, *([1] * (like.dim() - 1)))


def fm_sample_xt(u_out: torch.Tensor, eps: torch.Tensor, t, sigma_min: float = SIGMA_MIN) -> torch.Tensor:
    """x_t = t·u_out + (1 - (1 - σ_min)·t)·ε; t is a scalar or one value per batch entry."""
    require_same_shape(u_out, eps, "eps")
    t = _broadcast_time(t, u_out)
    if torch.any(t < 0) or torch.any(t > 1):
        raise ValidationError("flow time must lie in [0, 1]", "t")
    return t * u_out + (1 - (1 - sigma_min) * t) * eps


def fm_target(u_out: torch.Tensor, eps: torch.Tensor, sigma_min: float = SIGMA_MIN) -> torch.Tensor:
    """d x_t / dt along the path."""
    return u_out - (1 - sigma_min) * eps


def fm_loss(model_out: torch.Tensor, u_out: torch.Tensor, eps: torch.Tensor, sigma_min: float = SIGMA_MIN) -> torch.Tensor:
    return mse_loss(model_out, fm_target(u_out, eps, sigma_min))


def flow_state(u_out: torch.Tensor, generator: torch.Generator, sigma_min: float = SIGMA_MIN) -> FlowState:
    """Draw ε ~ N(0, I) and t ~ U[0, 1] per batch entry."""
    eps = torch.randn(u_out.shape, generator=generator, dtype=u_out.dtype)
    t = torch.rand(u_out.shape[0], generator=generator, dtype=u_out.dtype)
    return FlowState(fm_sample_xt(u_out, eps, t, sigma_min), t, sigma_min, eps)
