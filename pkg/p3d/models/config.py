"""Model hyperparameters and the named presets."""
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Tuple

from ..numerics.ops import PadMode
from ..validation import ValidationError


@dataclass
class ModelConfig:
    """Architecture of one P3D network"""
    embed_dims: List[int] = field(default_factory=lambda: [32, 32, 64])
    groups: int = 16
    transformer_dim: int = 192
    heads: int = 4
    window: int = 4
    conv_downs: int = 2
    patch: int = 8
    depth: int = 4
    in_channels: int = 3
    out_channels: int = 3
    cond_dim: int = 64
    num_params: int = 0
    num_classes: int = 0
    pad_mode: str = PadMode.ZERO.value

    def __post_init__(self):
        self.validate()

    @property
    def token_spacing(self) -> int:
        return 2 ** self.conv_downs * self.patch

    def validate(self) -> None:
        if len(self.embed_dims) != self.conv_downs + 1:
            raise ValidationError(
                f"embed_dims needs {self.conv_downs + 1} entries, got {self.embed_dims}", "embed_dims"
            )
        for width in self.embed_dims:
            if width % self.groups != 0:
                raise ValidationError(f"width {width} not divisible by {self.groups} groups", "groups")
        if self.transformer_dim % self.heads != 0:
            raise ValidationError(
                f"transformer_dim {self.transformer_dim} not divisible by {self.heads} heads", "heads"
            )
        if self.window < 1 or self.patch < 1 or self.depth < 0:
            raise ValidationError("window and patch must be >= 1, depth >= 0", "window")
        if self.cond_dim % 2 != 0:
            raise ValidationError(f"cond_dim must be even, got {self.cond_dim}", "cond_dim")
        PadMode(self.pad_mode)

    def token_grid(self, extents: Tuple[int, int, int]) -> Tuple[int, int, int]:
        s = self.token_spacing
        bad = [n for n in extents if n % s]
        if bad:
            raise ValidationError(
                f"spatial extents {tuple(extents)} must be multiples of token spacing {s}", "extents"
            )
        return tuple(n // s for n in extents)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelConfig':
        data = dict(data)
        preset_name = data.pop("preset", None)
        if preset_name is not None:
            return preset(preset_name, **data)
        return cls(**data)


PRESETS: Dict[str, Dict[str, Any]] = {
    "S": dict(embed_dims=[32, 32, 64], groups=16, transformer_dim=192, heads=4),
    "B": dict(embed_dims=[64, 128, 128], groups=32, transformer_dim=384, heads=6),
    "L": dict(embed_dims=[128, 256, 256], groups=32, transformer_dim=512, heads=8),
    "tiny": dict(
        embed_dims=[4, 4, 8], groups=2, transformer_dim=16, heads=2,
        window=2, patch=2, depth=2, cond_dim=16,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "preset")
    base = ModelConfig(**PRESETS[name])
    return replace(base, **overrides) if overrides else base
