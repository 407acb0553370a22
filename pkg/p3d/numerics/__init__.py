"""
Numerics

- ops: convolution, normalization, attention and pixel-shuffle primitives
- spectral: half-spectrum FFT utilities and wavenumber grids
- blobs: tensor blob file format
- runtime: seeding, thread caps and deterministic execution
- gradcheck: finite-difference gradient audits
"""

from .ops import (
    PadMode,
    attention,
    backward,
    concat,
    conv3,
    gelu,
    group_norm,
    linear,
    pixel_shuffle_3d,
    pixel_unshuffle_3d,
    softmax,
)
from .spectral import SpectralField, dealias_mask, irfft3, rfft3, wavenumbers
from .blobs import BlobError, read_blob, write_blob
from .gradcheck import check_module_gradients, perturb_parameters
from .runtime import configure_threads, deterministic_mode, resolve_threads, seed_everything

__all__ = [
    'PadMode',
    'attention',
    'backward',
    'concat',
    'conv3',
    'gelu',
    'group_norm',
    'linear',
    'pixel_shuffle_3d',
    'pixel_unshuffle_3d',
    'softmax',
    'SpectralField',
    'dealias_mask',
    'irfft3',
    'rfft3',
    'wavenumbers',
    'BlobError',
    'read_blob',
    'write_blob',
    'configure_threads',
    'deterministic_mode',
    'resolve_threads',
    'seed_everything',
    'check_module_gradients',
    'perturb_parameters',
]
