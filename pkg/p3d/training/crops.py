"""Random crops applied identically to an input/target pair."""
from typing import Sequence, Tuple, Union

import torch

from ..validation import ValidationError


def crop_offsets(extents: Sequence[int], size: Sequence[int], generator: torch.Generator) -> Tuple[int, ...]:
    """Uniform offsets in [0, extent - size] per axis."""
    offsets = []
    for n, s in zip(extents, size):
        if s > n:
            raise ValidationError(f"crop size {tuple(size)} exceeds domain {tuple(extents)}", "size")
        offsets.append(int(torch.randint(0, n - s + 1, (1,), generator=generator).item()))
    return tuple(offsets)


def crop_sample(
    pair: Tuple[torch.Tensor, torch.Tensor],
    size: Union[int, Sequence[int]],
    generator: torch.Generator,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Crop both states of a [.., X, Y, Z] pair at the same random offset."""
    s_in, s_out = pair
    if s_in.shape[-3:] != s_out.shape[-3:]:
        raise ValidationError(
            f"pair spatial shapes differ: {tuple(s_in.shape[-3:])} vs {tuple(s_out.shape[-3:])}", "pair"
        )
    if isinstance(size, int):
        size = (size, size, size)
    ox, oy, oz = crop_offsets(s_in.shape[-3:], size, generator)
    sx, sy, sz = size
    window = (..., slice(ox, ox + sx), slice(oy, oy + sy), slice(oz, oz + sz))
    return s_in[window], s_out[window]
