"""
Models

- config: ModelConfig and the S/B/L/tiny presets
- conditioning: conditioning inputs and their embedding
- blocks: convolutional encoder/decoder blocks, up/downsampling, patchify
- attention: windowed multi-head self-attention with relative position bias
- transformer: adaLN-Zero transformer blocks
- backbone: the P3D network
- context: region layouts, the global context model and ContextualP3D
- checkpoint: checkpoint directories
"""

from .backbone import P3D, BackboneState
from .checkpoint import CheckpointError, checkpoint_digest, load_backbone_weights, load_checkpoint, save_checkpoint
from .conditioning import Conditioning, ConditioningEmbedder
from .config import PRESETS, ModelConfig, preset
from .context import (
    ContextConfig,
    ContextModel,
    ContextualP3D,
    RegionLayout,
    RegionMask,
    inject_context,
    register_attention_kernel,
)

__all__ = [
    'P3D',
    'BackboneState',
    'CheckpointError',
    'checkpoint_digest',
    'load_backbone_weights',
    'load_checkpoint',
    'save_checkpoint',
    'Conditioning',
    'ConditioningEmbedder',
    'PRESETS',
    'ModelConfig',
    'preset',
    'ContextConfig',
    'ContextModel',
    'ContextualP3D',
    'RegionLayout',
    'RegionMask',
    'inject_context',
    'register_attention_kernel',
]
