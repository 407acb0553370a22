"""
Error and turbulence-statistics metrics.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import windows

from ..numerics.spectral import half_spectrum_weights, mode_indices, rfft3
from ..validation import ValidationError

logger = logging.getLogger(__name__)

ZERO_VARIANCE = 1e-12

ArrayLike = Union[np.ndarray, "torch.Tensor"]


def _numpy(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def nrmse(pred: ArrayLike, ref: ArrayLike) -> float:
    """Per-sample ‖pred − ref‖₂ / ‖ref‖₂ over all channels and voxels, averaged over the batch axis."""
    p, r = _numpy(pred), _numpy(ref)
    if p.shape != r.shape:
        raise ValidationError(f"nrmse shape mismatch {p.shape} vs {r.shape}", "pred")
    p = p.reshape(p.shape[0], -1)
    r = r.reshape(r.shape[0], -1)
    ref_norm = np.linalg.norm(r, axis=1)
    if np.any(ref_norm == 0):
        raise ValidationError("nrmse is undefined for a reference with zero norm", "ref")
    return float(np.mean(np.linalg.norm(p - r, axis=1) / ref_norm))


def _derivative(u: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2.0 * h)
    return np.gradient(u, h, axis=axis, edge_order=2)


def vorticity_fd(
    velocity: ArrayLike, spacing: Union[float, Sequence[float]] = 1.0, periodic: bool = False
) -> np.ndarray:
    """ω = ∇×u by second-order central differences, [3, X, Y, Z] -> [3, X, Y, Z].

    Non-periodic boundaries use second-order one-sided differences.
    """
    u = _numpy(velocity)
    if u.ndim != 4 or u.shape[0] != 3:
        raise ValidationError(f"vorticity needs [3, X, Y, Z] velocity, got {u.shape}", "velocity")
    hx, hy, hz = (spacing,) * 3 if np.isscalar(spacing) else tuple(spacing)
    d = lambda c, axis, h: _derivative(u[c], h, axis, periodic)
    return np.stack([
        d(2, 1, hy) - d(1, 2, hz),
        d(0, 2, hz) - d(2, 0, hx),
        d(1, 0, hx) - d(0, 1, hy),
    ])


@dataclass
class EnstrophyGraph:
    """Enstrophy per integer wavenumber shell"""
    shells: np.ndarray
    values: np.ndarray


def hann_window_3d(shape: Sequence[int]) -> np.ndarray:
    wx, wy, wz = (windows.hann(n, sym=True) for n in shape)
    return wx[:, None, None] * wy[None, :, None] * wz[None, None, :]


def enstrophy_graph(vorticity: ArrayLike, window: str = "hann") -> EnstrophyGraph:
    """½·Σ|ω̂|² per shell k (|m| in [k−½, k+½)), with ω̂ = FFT(ω)/N.

    Accepts one field [3, X, Y, Z] or several crops [N, 3, X, Y, Z]; the
    graphs of multiple crops are averaged.
    """
    w = _numpy(vorticity)
    if w.ndim == 4:
        w = w[None]
    if w.ndim != 5:
        raise ValidationError(f"vorticity must be [3, X, Y, Z] or [N, 3, X, Y, Z], got {w.shape}", "vorticity")
    extents = w.shape[-3:]
    if len(set(extents)) != 1:
        raise ValidationError(f"enstrophy graph needs a cubic grid, got {extents}", "vorticity")
    if window == "hann":
        w = w * hann_window_3d(extents)
    elif window != "none":
        raise ValidationError(f"window must be 'hann' or 'none', got {window!r}", "window")

    n_total = float(np.prod(extents))
    coeffs = rfft3(w).coefficients / n_total
    power = np.sum(np.abs(coeffs) ** 2, axis=1) * half_spectrum_weights(extents[2])
    mx, my, mz = mode_indices(extents)
    shell = np.floor(np.sqrt(mx ** 2 + my ** 2 + mz ** 2) + 0.5).astype(int)
    shell = np.broadcast_to(shell, power.shape[1:])
    count = int(shell.max()) + 1
    per_crop = np.stack([0.5 * np.bincount(shell.ravel(), weights=p.ravel(), minlength=count) for p in power])
    return EnstrophyGraph(np.arange(count), per_crop.mean(axis=0))


def enstrophy_l2(graph_pred: EnstrophyGraph, graph_ref: EnstrophyGraph) -> float:
    if not np.array_equal(graph_pred.shells, graph_ref.shells):
        raise ValidationError("enstrophy graphs use different shells", "graph_pred")
    return float(np.linalg.norm(graph_pred.values - graph_ref.values))


@dataclass
class ProfileMoments:
    """Mean, variance and skewness of the streamwise velocity per wall-normal coordinate"""
    coords: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray

    def moment(self, m: int) -> np.ndarray:
        if m not in (1, 2, 3):
            raise ValidationError(f"moment order must be 1, 2 or 3, got {m}", "m")
        return (self.mean, self.variance, self.skewness)[m - 1]


def _moments(values: np.ndarray, axis) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    mu = values.mean(axis=axis)
    centred = values - np.expand_dims(mu, axis) if np.ndim(mu) else values - mu
    var = np.mean(centred ** 2, axis=axis)
    third = np.mean(centred ** 3, axis=axis)
    sigma = np.sqrt(var)
    skew = np.where(sigma < ZERO_VARIANCE, 0.0, third / np.where(sigma < ZERO_VARIANCE, 1.0, sigma ** 3))
    return mu, var, skew


def _stack_samples(samples) -> np.ndarray:
    if isinstance(samples, (list, tuple)):
        if not samples:
            raise ValidationError("moment statistics need at least one sample", "samples")
        arr = np.stack([_numpy(s) for s in samples])
    else:
        arr = _numpy(samples)
        if arr.ndim == 4:
            arr = arr[None]
    if arr.ndim != 5 or arr.shape[0] == 0:
        raise ValidationError(f"samples must be [N, C, X, Y, Z] with N >= 1, got {arr.shape}", "samples")
    return arr


def profile_moments(samples, flow_axis: int, wall_axis: int) -> ProfileMoments:
    """Moments of channel `flow_axis` per coordinate along spatial axis `wall_axis` (0, 1 or 2).

    Statistics pool the remaining spatial axes and all samples.
    """
    arr = _stack_samples(samples)
    if wall_axis not in (0, 1, 2):
        raise ValidationError(f"wall_axis must be a spatial axis 0..2, got {wall_axis}", "wall_axis")
    u = np.moveaxis(arr[:, flow_axis], 1 + wall_axis, 0)
    flat = u.reshape(u.shape[0], -1)
    mean, var, skew = _moments(flat, axis=1)
    return ProfileMoments(np.arange(u.shape[0]), mean, var, skew)


def profile_l2(p_pred: ProfileMoments, p_ref: ProfileMoments, m: int) -> float:
    a, b = p_pred.moment(m), p_ref.moment(m)
    if a.shape != b.shape:
        raise ValidationError(f"profiles have different lengths {a.shape} vs {b.shape}", "p_pred")
    return float(np.linalg.norm(a - b))


def global_moments(samples, flow_axis: int = 0) -> Tuple[float, float, float]:
    """Pooled (mean, variance, skewness) of the streamwise channel over all voxels and samples."""
    arr = _stack_samples(samples)
    mean, var, skew = _moments(arr[:, flow_axis].ravel(), axis=0)
    return float(mean), float(var), float(skew)
