"""Real-input 3-D FFT utilities for the data generator and the metrics."""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..validation import ValidationError


@dataclass
class SpectralField:
    """Half-spectrum coefficients of a real field; leading axes are batch/channel."""
    coefficients: np.ndarray
    extents: Tuple[int, int, int]
    lengths: Tuple[float, float, float]


def rfft3(field: np.ndarray, lengths: Optional[Sequence[float]] = None) -> SpectralField:
    field = np.asarray(field)
    if field.ndim < 3:
        raise ValidationError(f"rfft3 expects at least 3 axes, got {field.shape}", "field")
    extents = tuple(int(n) for n in field.shape[-3:])
    if min(extents) < 2:
        raise ValidationError(f"rfft3 needs extents >= 2, got {extents}", "field")
    if np.iscomplexobj(field):
        raise ValidationError("rfft3 expects a real field", "field")
    if lengths is None:
        lengths = (2 * np.pi,) * 3
    coeffs = np.fft.rfftn(field, axes=(-3, -2, -1))
    return SpectralField(coeffs, extents, tuple(float(l) for l in lengths))


def irfft3(spectral: SpectralField) -> np.ndarray:
    return np.fft.irfftn(spectral.coefficients, s=spectral.extents, axes=(-3, -2, -1))


def mode_indices(extents: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer mode numbers on the half-spectrum, broadcastable to its shape."""
    nx, ny, nz = extents
    mx = np.fft.fftfreq(nx, d=1.0 / nx)[:, None, None]
    my = np.fft.fftfreq(ny, d=1.0 / ny)[None, :, None]
    mz = np.fft.rfftfreq(nz, d=1.0 / nz)[None, None, :]
    return mx, my, mz


def wavenumbers(
    extents: Sequence[int], lengths: Sequence[float], zero_nyquist: bool = False
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Angular wavenumbers 2π·m/L per axis on the half-spectrum.

    With `zero_nyquist` the unpaired Nyquist mode is dropped, as required for
    odd-order derivatives of real fields.
    """
    ks = []
    for m, n, length in zip(mode_indices(extents), extents, lengths):
        k = 2.0 * np.pi * m / length
        if zero_nyquist and n % 2 == 0:
            k = np.where(np.abs(m) == n // 2, 0.0, k)
        ks.append(k)
    return ks[0], ks[1], ks[2]


def wavenumber_norm_sq(extents: Sequence[int], lengths: Sequence[float]) -> np.ndarray:
    kx, ky, kz = wavenumbers(extents, lengths)
    return kx ** 2 + ky ** 2 + kz ** 2


def dealias_mask(extents: Sequence[int]) -> np.ndarray:
    """2/3-rule mask: True where |m_i| < n_i/3 on every axis."""
    mx, my, mz = mode_indices(extents)
    nx, ny, nz = extents
    return (np.abs(mx) < nx / 3.0) & (np.abs(my) < ny / 3.0) & (np.abs(mz) < nz / 3.0)


def half_spectrum_weights(nz: int) -> np.ndarray:
    """Multiplicity of each rfft z-mode in the full spectrum."""
    w = np.full(nz // 2 + 1, 2.0)
    w[0] = 1.0
    if nz % 2 == 0:
        w[-1] = 1.0
    return w


def spectral_energy(spectral: SpectralField) -> np.ndarray:
    """Σ|û|² over the full spectrum, reduced over the three spatial axes."""
    w = half_spectrum_weights(spectral.extents[2])
    return np.sum(np.abs(spectral.coefficients) ** 2 * w, axis=(-3, -2, -1))
