"""
Neural-network primitives with explicit shape contracts.

Arithmetic is delegated to torch; every function here validates its inputs
and raises ValidationError on contract violations so that callers get a
message naming the offending argument instead of a backend stack trace.
"""
import logging
import math
from enum import Enum
from typing import List, Optional, Sequence

import torch
import torch.nn.functional as F

from ..validation import ValidationError, require_rank

logger = logging.getLogger(__name__)

NORM_EPS = 1e-5


class PadMode(str, Enum):
    ZERO = "zero"
    CIRCULAR = "circular"


def conv3(
    input: torch.Tensor,
    weight: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
    stride: int = 1,
    padding: Optional[int] = None,
    pad_mode: str = "zero",
) -> torch.Tensor:
    """3-D convolution over [B, Cin, X, Y, Z] with zero or circular padding.

    Circular mode pads periodically and convolves without implicit padding,
    so the op commutes with circular shifts that are multiples of `stride`.
    """
    require_rank(input, 5, "input")
    require_rank(weight, 5, "weight")
    cout, cin, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if tuple(weight.shape[2:]) != (k, k, k) or k % 2 == 0:
        raise ValidationError(f"kernel must be cubic with odd size, got {tuple(weight.shape[2:])}", "weight")
    if input.shape[1] != cin:
        raise ValidationError(f"input has {input.shape[1]} channels, weight expects {cin}", "input")
    if stride not in (1, 2):
        raise ValidationError(f"stride must be 1 or 2, got {stride}", "stride")
    if padding is None:
        padding = (k - 1) // 2
    if padding != (k - 1) // 2:
        raise ValidationError(f"padding must be {(k - 1) // 2} for kernel {k}, got {padding}", "padding")
    if bias is not None and tuple(bias.shape) != (cout,):
        raise ValidationError(f"bias must have shape ({cout},), got {tuple(bias.shape)}", "bias")

    mode = PadMode(pad_mode)
    if mode is PadMode.CIRCULAR:
        if any(n % stride for n in input.shape[2:]):
            raise ValidationError(
                f"circular padding needs extents divisible by stride {stride}, got {tuple(input.shape[2:])}",
                "input",
            )
        if padding:
            input = F.pad(input, (padding,) * 6, mode="circular")
        return F.conv3d(input, weight, bias, stride=stride, padding=0)
    return F.conv3d(input, weight, bias, stride=stride, padding=padding)


def group_norm(
    input: torch.Tensor,
    groups: int,
    gamma: Optional[torch.Tensor] = None,
    beta: Optional[torch.Tensor] = None,
    eps: float = NORM_EPS,
) -> torch.Tensor:
    if input.dim() < 2:
        raise ValidationError(f"group_norm expects [B, C, ...], got {tuple(input.shape)}", "input")
    channels = input.shape[1]
    if groups < 1 or channels % groups != 0:
        raise ValidationError(f"{channels} channels not divisible into {groups} groups", "groups")
    if eps <= 0:
        raise ValidationError(f"eps must be positive, got {eps}", "eps")
    return F.group_norm(input, groups, gamma, beta, eps)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x, approximate="tanh")


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """x @ W + b with W stored as [in_features, out_features]."""
    require_rank(weight, 2, "weight")
    if x.shape[-1] != weight.shape[0]:
        raise ValidationError(f"feature size {x.shape[-1]} does not match weight {tuple(weight.shape)}", "x")
    out = x @ weight
    if bias is not None:
        if tuple(bias.shape) != (weight.shape[1],):
            raise ValidationError(f"bias must have shape ({weight.shape[1]},)", "bias")
        out = out + bias
    return out


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def concat(tensors: Sequence[torch.Tensor], dim: int = 1) -> torch.Tensor:
    """Concatenate along `dim`; all other extents must agree."""
    if not tensors:
        raise ValidationError("concat needs at least one tensor", "tensors")
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, other)) if i != dim % len(ref)):
            raise ValidationError(f"concat shape mismatch {tuple(ref)} vs {tuple(other)}", "tensors")
    return torch.cat(list(tensors), dim=dim)


def attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    bias: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Dense softmax(q kᵀ / √Dh + bias) v over [B, H, T, Dh]."""
    require_rank(q, 4, "q")
    if k.shape != q.shape or v.shape[:3] != q.shape[:3]:
        raise ValidationError(
            f"attention shape mismatch q={tuple(q.shape)} k={tuple(k.shape)} v={tuple(v.shape)}", "k"
        )
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if bias is not None:
        t = q.shape[2]
        if bias.shape[-2:] != (t, t):
            raise ValidationError(f"bias must end in ({t}, {t}), got {tuple(bias.shape)}", "bias")
        scores = scores + bias
    return torch.softmax(scores, dim=-1) @ v


def pixel_shuffle_3d(input: torch.Tensor, r: int) -> torch.Tensor:
    """[B, r³C, X, Y, Z] -> [B, C, rX, rY, rZ].

    Channel c·r³ + (i·r² + j·r + l) at voxel (x, y, z) lands on channel c at
    (r·x + i, r·y + j, r·z + l).
    """
    require_rank(input, 5, "input")
    b, ch, x, y, z = input.shape
    if ch % (r ** 3) != 0:
        raise ValidationError(f"{ch} channels not divisible by r^3 = {r ** 3}", "input")
    c = ch // r ** 3
    out = input.reshape(b, c, r, r, r, x, y, z)
    out = out.permute(0, 1, 5, 2, 6, 3, 7, 4)
    return out.reshape(b, c, x * r, y * r, z * r)


def pixel_unshuffle_3d(input: torch.Tensor, r: int) -> torch.Tensor:
    """Inverse of pixel_shuffle_3d."""
    require_rank(input, 5, "input")
    b, c, x, y, z = input.shape
    if x % r or y % r or z % r:
        raise ValidationError(f"extents {(x, y, z)} not divisible by {r}", "input")
    out = input.reshape(b, c, x // r, r, y // r, r, z // r, r)
    out = out.permute(0, 1, 3, 5, 7, 2, 4, 6)
    return out.reshape(b, c * r ** 3, x // r, y // r, z // r)


def backward(loss: torch.Tensor, leaves: Sequence[torch.Tensor], retain_graph: bool = False) -> List[torch.Tensor]:
    """Reverse-mode gradients of a scalar loss w.r.t. each leaf.

    Leaves the loss does not reach, or that do not require gradients, get zeros.
    """
    if loss.numel() != 1:
        raise ValidationError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}", "loss")
    tracked = [leaf for leaf in leaves if leaf.requires_grad]
    grads = torch.autograd.grad(loss, tracked, allow_unused=True, retain_graph=retain_graph) if tracked else ()
    by_id = {id(leaf): g for leaf, g in zip(tracked, grads)}
    result = []
    for leaf in leaves:
        g = by_id.get(id(leaf))
        result.append(torch.zeros_like(leaf) if g is None else g)
    return result
