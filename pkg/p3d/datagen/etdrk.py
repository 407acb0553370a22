"""
Exponential time differencing Runge-Kutta integrators.

The stiff linear part L is integrated exactly in Fourier space; the
nonlinear part is handled by Runge-Kutta stages. Coefficient functions are
evaluated by averaging over a circle of points around z = L·dt when |z| is
small, which avoids cancellation in expressions like (e^z - 1)/z.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

CONTOUR_POINTS = 16
CONTOUR_THRESHOLD = 0.5

NonlinearFn = Callable[[np.ndarray], np.ndarray]


def _contour_points() -> np.ndarray:
    j = np.arange(CONTOUR_POINTS)
    return np.exp(2j * np.pi * (j + 0.5) / CONTOUR_POINTS)


def evaluate_phi(fn: Callable[[np.ndarray], np.ndarray], z: np.ndarray) -> np.ndarray:
    """fn(z) directly for |z| >= threshold, else the mean of fn over a unit circle around z."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < CONTOUR_THRESHOLD
    large = ~small
    with np.errstate(divide="ignore", invalid="ignore"):
        out[large] = fn(z[large])
    if np.any(small):
        shifted = z[small][..., None] + _contour_points()
        out[small] = np.mean(fn(shifted), axis=-1)
    return out


def phi1(z: np.ndarray) -> np.ndarray:
    return evaluate_phi(lambda s: (np.exp(s) - 1.0) / s, z)


def phi2(z: np.ndarray) -> np.ndarray:
    return evaluate_phi(lambda s: (np.exp(s) - 1.0 - s) / s ** 2, z)


def _maybe_real(x: np.ndarray, real: bool) -> np.ndarray:
    return x.real.copy() if real else x


@dataclass
class ETDRKCoefficients:
    """Precomputed exponentials and coefficient arrays for one linear symbol and dt"""
    order: int
    dt: float
    exp_full: np.ndarray
    exp_half: Optional[np.ndarray] = None
    c1: Optional[np.ndarray] = None
    c2: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    f1: Optional[np.ndarray] = None
    f2: Optional[np.ndarray] = None
    f3: Optional[np.ndarray] = None


def etdrk_precompute(linear: np.ndarray, dt: float, order: int = 2) -> ETDRKCoefficients:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if order not in (2, 4):
        raise ValueError(f"ETDRK order must be 2 or 4, got {order}")
    linear = np.asarray(linear)
    real = not np.iscomplexobj(linear)
    z = linear * dt
    exp_full = _maybe_real(np.exp(z.astype(complex)), real)
    if order == 2:
        return ETDRKCoefficients(
            order=2, dt=dt, exp_full=exp_full,
            c1=_maybe_real(dt * phi1(z), real),
            c2=_maybe_real(dt * phi2(z), real),
        )
    f1 = evaluate_phi(lambda s: (-4.0 - s + np.exp(s) * (4.0 - 3.0 * s + s ** 2)) / s ** 3, z)
    f2 = evaluate_phi(lambda s: (2.0 + s + np.exp(s) * (s - 2.0)) / s ** 3, z)
    f3 = evaluate_phi(lambda s: (-4.0 - 3.0 * s - s ** 2 + np.exp(s) * (4.0 - s)) / s ** 3, z)
    return ETDRKCoefficients(
        order=4, dt=dt, exp_full=exp_full,
        exp_half=_maybe_real(np.exp(z.astype(complex) / 2.0), real),
        q=_maybe_real(0.5 * dt * phi1(z / 2.0), real),
        f1=_maybe_real(dt * f1, real),
        f2=_maybe_real(dt * f2, real),
        f3=_maybe_real(dt * f3, real),
    )


def etdrk2_step(u_hat: np.ndarray, nonlinear: NonlinearFn, coeffs: ETDRKCoefficients) -> np.ndarray:
    n_u = nonlinear(u_hat)
    a = coeffs.exp_full * u_hat + coeffs.c1 * n_u
    return a + coeffs.c2 * (nonlinear(a) - n_u)


def etdrk4_step(u_hat: np.ndarray, nonlinear: NonlinearFn, coeffs: ETDRKCoefficients) -> np.ndarray:
    n_u = nonlinear(u_hat)
    a = coeffs.exp_half * u_hat + coeffs.q * n_u
    n_a = nonlinear(a)
    b = coeffs.exp_half * u_hat + coeffs.q * n_a
    n_b = nonlinear(b)
    c = coeffs.exp_half * a + coeffs.q * (2.0 * n_b - n_u)
    n_c = nonlinear(c)
    return coeffs.exp_full * u_hat + coeffs.f1 * n_u + 2.0 * coeffs.f2 * (n_a + n_b) + coeffs.f3 * n_c


def etdrk_step(u_hat: np.ndarray, nonlinear: NonlinearFn, coeffs: ETDRKCoefficients) -> np.ndarray:
    if coeffs.order == 4:
        return etdrk4_step(u_hat, nonlinear, coeffs)
    return etdrk2_step(u_hat, nonlinear, coeffs)
