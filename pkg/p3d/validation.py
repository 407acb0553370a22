"""Shared contract checks used across the package."""
from typing import Optional, Sequence

import torch


class ValidationError(Exception):
    """Custom exception for contract violations"""
    def __init__(self, message: str, field: Optional[str] = None):
        self.message = message
        self.field = field
        super().__init__(self.message)


def require(condition: bool, message: str, field: Optional[str] = None) -> None:
    if not condition:
        raise ValidationError(message, field)


def require_rank(tensor: torch.Tensor, rank: int, field: str) -> None:
    """Ensure a tensor has exactly `rank` dimensions."""
    if tensor.dim() != rank:
        raise ValidationError(
            f"{field} must have rank {rank}, got shape {tuple(tensor.shape)}", field
        )


def require_same_shape(a: torch.Tensor, b: torch.Tensor, field: str) -> None:
    if a.shape != b.shape:
        raise ValidationError(
            f"{field}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}", field
        )


def require_divisible(extents: Sequence[int], divisor: int, field: str) -> None:
    """Ensure every spatial extent is a multiple of `divisor`."""
    bad = [n for n in extents if n % divisor != 0]
    if bad:
        raise ValidationError(
            f"{field}: spatial extents {tuple(extents)} must be multiples of {divisor}",
            field,
        )


def require_probability(value: float, field: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{field} must lie in [0, 1], got {value}", field)
