"""
Data generation

- initializers: truncated Fourier, Gaussian random field, diffused noise, Gray-Scott blobs
- etdrk: exponential time differencing Runge-Kutta integrators (orders 2 and 4)
- families: the PDE families and their parameter ranges
- simulate: time integration of one family into a dataset container
- storage: dataset container files and train/validation/test splits
"""

from .etdrk import ETDRKCoefficients, etdrk2_step, etdrk4_step, etdrk_precompute, phi1, phi2
from .families import FAMILIES, GRAY_SCOTT_CONFIGS, PDESpec, SpectralGrid, get_family
from .initializers import init_diffused, init_fourier, init_grf, init_gs_blobs, init_random
from .simulate import SimConfig, SimulationError, simulate
from .storage import (
    DatasetContainer,
    DatasetError,
    dataset_digest,
    list_datasets,
    read_dataset,
    split_indices,
    write_dataset,
)

__all__ = [
    'ETDRKCoefficients',
    'etdrk2_step',
    'etdrk4_step',
    'etdrk_precompute',
    'phi1',
    'phi2',
    'FAMILIES',
    'GRAY_SCOTT_CONFIGS',
    'PDESpec',
    'SpectralGrid',
    'get_family',
    'init_diffused',
    'init_fourier',
    'init_grf',
    'init_gs_blobs',
    'init_random',
    'SimConfig',
    'SimulationError',
    'simulate',
    'DatasetContainer',
    'DatasetError',
    'dataset_digest',
    'list_datasets',
    'read_dataset',
    'split_indices',
    'write_dataset',
]
