"""
Randomized initial states.

Every scalar initializer returns a float64 field normalized to max|u| = 1.
Vector states draw one initializer and apply it to each component with
independent randomness.
"""
import logging
from typing import Callable, Dict, Sequence, Tuple

import numpy as np

from ..numerics.spectral import mode_indices, wavenumber_norm_sq

logger = logging.getLogger(__name__)

CUTOFF_RANGE = (2, 10)
GRF_EXPONENT_RANGE = (2.3, 3.6)
DIFFUSION_INTENSITY_RANGE = (5e-5, 0.01)
GS_BLOB_COUNT = 4
SPATIAL_AXES = (0, 1, 2)


def _normalize(u: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(u))
    if peak == 0:
        return u
    return u / peak


def _random_spectrum(rng: np.random.Generator, grid: Sequence[int]) -> np.ndarray:
    nx, ny, nz = grid
    shape = (nx, ny, nz // 2 + 1)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def init_fourier(rng: np.random.Generator, grid: Sequence[int], cutoff: int = None) -> np.ndarray:
    """Random truncated Fourier series with zero mean."""
    if cutoff is None:
        cutoff = int(rng.integers(CUTOFF_RANGE[0], CUTOFF_RANGE[1] + 1))
    mx, my, mz = mode_indices(grid)
    radius = np.sqrt(mx ** 2 + my ** 2 + mz ** 2)
    coeffs = _random_spectrum(rng, grid) * (radius <= cutoff)
    coeffs[0, 0, 0] = 0.0
    return _normalize(np.fft.irfftn(coeffs, s=tuple(grid), axes=SPATIAL_AXES))


def init_grf(rng: np.random.Generator, grid: Sequence[int], exponent: float = None) -> np.ndarray:
    """Gaussian random field whose power decays as |k|^-exponent."""
    if exponent is None:
        exponent = float(rng.uniform(*GRF_EXPONENT_RANGE))
    mx, my, mz = mode_indices(grid)
    radius = np.sqrt(mx ** 2 + my ** 2 + mz ** 2)
    amplitude = np.zeros_like(radius)
    np.power(radius, -exponent / 2.0, out=amplitude, where=radius > 0)
    coeffs = _random_spectrum(rng, grid) * amplitude
    return _normalize(np.fft.irfftn(coeffs, s=tuple(grid), axes=SPATIAL_AXES))


def init_diffused(
    rng: np.random.Generator, grid: Sequence[int], intensity: float = None,
    lengths: Sequence[float] = (1.0, 1.0, 1.0),
) -> np.ndarray:
    """White noise diffused by exp(-intensity·|k|²) in Fourier space."""
    if intensity is None:
        intensity = float(rng.uniform(*DIFFUSION_INTENSITY_RANGE))
    noise = rng.standard_normal(tuple(grid))
    k2 = wavenumber_norm_sq(grid, lengths)
    coeffs = np.fft.rfftn(noise, axes=SPATIAL_AXES) * np.exp(-intensity * k2)
    return _normalize(np.fft.irfftn(coeffs, s=tuple(grid), axes=SPATIAL_AXES))


INITIALIZERS: Dict[str, Callable[..., np.ndarray]] = {
    "fourier": init_fourier,
    "grf": init_grf,
    "diffused": init_diffused,
}


def init_random(rng: np.random.Generator, grid: Sequence[int], channels: int) -> Tuple[str, np.ndarray]:
    """Pick one initializer at random and apply it per channel -> [C, X, Y, Z]."""
    name = list(INITIALIZERS)[int(rng.integers(len(INITIALIZERS)))]
    fn = INITIALIZERS[name]
    fields = np.stack([fn(rng, grid) for _ in range(channels)])
    logger.debug(f"Initial state from '{name}' initializer, {channels} channel(s)")
    return name, fields


def sample_gs_blobs(
    rng: np.random.Generator, grid: Sequence[int], central_fraction: float = 0.6,
    count: int = GS_BLOB_COUNT,
) -> Tuple[np.ndarray, np.ndarray]:
    """c_b as Gaussian bumps centred inside the central fraction; returns (c_b, centres)."""
    centres = 0.5 + (rng.uniform(size=(count, 3)) - 0.5) * central_fraction
    widths = rng.uniform(0.05, 0.1, size=count)
    axes = [(np.arange(n) + 0.5) / n for n in grid]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    c_b = np.zeros(tuple(grid))
    for (cx, cy, cz), w in zip(centres, widths):
        c_b += np.exp(-((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) / (2.0 * w ** 2))
    return np.clip(c_b, 0.0, 1.0), centres


def init_gs_blobs(
    rng: np.random.Generator, grid: Sequence[int], central_fraction: float = 0.6
) -> Tuple[np.ndarray, np.ndarray]:
    c_b, _ = sample_gs_blobs(rng, grid, central_fraction)
    return 1.0 - c_b, c_b
