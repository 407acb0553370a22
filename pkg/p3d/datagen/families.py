"""
PDE families on periodic cubes.

Each family splits its right-hand side into a linear Fourier symbol L(k)
and a nonlinear term N(u) evaluated pseudo-spectrally. The exact equations
are listed in docs/PDE_FAMILIES.md.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..numerics.spectral import dealias_mask, wavenumbers
from ..validation import ValidationError
from .initializers import init_gs_blobs, init_random

logger = logging.getLogger(__name__)

GS_DIFFUSIVITY_A = 2e-5
GS_DIFFUSIVITY_B = 1e-5
GS_EXTENT = 2.5
GS_SIM_DT = 1.0
KDV_CONVECTION = -6.0
KDV_DISPERSIVITY = 1.0


class SpectralGrid:
    """Wavenumbers, dealiasing mask and transforms for one periodic grid."""
    def __init__(self, resolution: Sequence[int], lengths: Sequence[float]):
        self.resolution = tuple(int(n) for n in resolution)
        self.lengths = tuple(float(l) for l in lengths)
        self.k = wavenumbers(self.resolution, self.lengths)
        self.k_odd = wavenumbers(self.resolution, self.lengths, zero_nyquist=True)
        self.k2 = self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2
        self.mask = dealias_mask(self.resolution)

    def to_spectral(self, u: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(u, axes=(-3, -2, -1))

    def to_physical(self, u_hat: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(u_hat, s=self.resolution, axes=(-3, -2, -1))

    def gradient(self, u_hat: np.ndarray) -> np.ndarray:
        """Physical-space gradient of a scalar half-spectrum, [3, X, Y, Z]."""
        return np.stack([self.to_physical(1j * k * u_hat) for k in self.k_odd])


Params = Dict[str, float]
LinearFn = Callable[[Params, SpectralGrid], np.ndarray]
NonlinearPhysicalFn = Callable[[np.ndarray, np.ndarray, Params, SpectralGrid], np.ndarray]


@dataclass
class PDESpec:
    """One PDE family: symbols, nonlinearity, parameter ranges and storage cadence"""
    name: str
    channel_names: List[str]
    linear: LinearFn
    nonlinear: Optional[NonlinearPhysicalFn]
    param_ranges: Dict[str, Tuple[float, float]]
    dt_store: float
    substeps: int = 1
    warmup: int = 0
    extent: Union[float, Tuple[float, float]] = 1.0
    fixed_params: Params = field(default_factory=dict)
    initializer: str = "random"
    blob_fraction: float = 0.6
    clamp: Optional[Tuple[float, float]] = None
    dissipative: bool = True

    @property
    def channels(self) -> int:
        return len(self.channel_names)

    def sample_params(self, rng: np.random.Generator) -> Params:
        params = dict(self.fixed_params)
        for key, (low, high) in self.param_ranges.items():
            params[key] = float(rng.uniform(low, high))
        return params

    def sample_extent(self, rng: np.random.Generator) -> float:
        if isinstance(self.extent, tuple):
            return float(rng.uniform(*self.extent))
        return float(self.extent)

    def validate_params(self, params: Params) -> None:
        for key, (low, high) in self.param_ranges.items():
            if key not in params:
                raise ValidationError(f"{self.name}: missing parameter '{key}'", key)
            if not low <= params[key] < high:
                raise ValidationError(
                    f"{self.name}: {key}={params[key]} outside [{low}, {high})", key
                )

    def initial_state(self, rng: np.random.Generator, resolution: Sequence[int]) -> np.ndarray:
        if self.initializer == "gs_blobs":
            c_a, c_b = init_gs_blobs(rng, resolution, self.blob_fraction)
            return np.stack([c_a, c_b])
        _, u = init_random(rng, resolution, self.channels)
        if self.clamp is not None:
            u = np.clip(u, *self.clamp)
        return u

    def linear_symbol(self, params: Params, grid: SpectralGrid) -> np.ndarray:
        """L(k) broadcastable to [C, X, Y, Z//2+1]."""
        symbol = np.asarray(self.linear(params, grid))
        if symbol.ndim == 3:
            symbol = symbol[None]
        return symbol

    def make_nonlinear(self, params: Params, grid: SpectralGrid) -> Callable[[np.ndarray], np.ndarray]:
        """Dealiased N̂(û) for the ETDRK stages."""
        if self.nonlinear is None:
            return lambda u_hat: np.zeros_like(u_hat)

        def evaluate(u_hat: np.ndarray) -> np.ndarray:
            u = grid.to_physical(u_hat)
            return grid.to_spectral(self.nonlinear(u, u_hat, params, grid)) * grid.mask

        return evaluate


def _advection(u: np.ndarray, u_hat: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """(u·∇)u for a 3-component velocity."""
    out = np.zeros_like(u)
    for j in range(3):
        grad = grid.gradient(u_hat[j])
        out[j] = np.sum(u * grad, axis=0)
    return out


def _hyp_linear(p: Params, g: SpectralGrid) -> np.ndarray:
    return -p["hyper_diffusivity"] * g.k2 ** 2


def _fisher_linear(p: Params, g: SpectralGrid) -> np.ndarray:
    return -p["diffusivity"] * g.k2 + p["reactivity"]


def _fisher_nonlinear(u, u_hat, p, g):
    return -p["reactivity"] * u ** 2


def _sh_linear(p: Params, g: SpectralGrid) -> np.ndarray:
    return p["reactivity"] - (p["critical_number"] ** 2 - g.k2) ** 2


def _sh_nonlinear(u, u_hat, p, g):
    return u ** 2 - u ** 3


def _gs_linear(p: Params, g: SpectralGrid) -> np.ndarray:
    return np.stack([
        -p["diffusivity_a"] * g.k2 - p["feed_rate"],
        -p["diffusivity_b"] * g.k2 - (p["feed_rate"] + p["kill_rate"]),
    ])


def _gs_nonlinear(u, u_hat, p, g):
    reaction = u[0] * u[1] ** 2
    return np.stack([-reaction + p["feed_rate"], reaction])


def _burgers_linear(p: Params, g: SpectralGrid) -> np.ndarray:
    return -p["viscosity"] * g.k2


def _burgers_nonlinear(u, u_hat, p, g):
    return -_advection(u, u_hat, g)


def _kdv_linear(p: Params, g: SpectralGrid) -> np.ndarray:
    dispersion = sum(k ** 3 for k in g.k_odd)
    return 1j * p["dispersivity"] * dispersion - p["viscosity"] * g.k2


def _kdv_nonlinear(u, u_hat, p, g):
    return p["convection"] * _advection(u, u_hat, g)


def _ks_linear(p: Params, g: SpectralGrid) -> np.ndarray:
    return g.k2 - g.k2 ** 2


def _ks_nonlinear(u, u_hat, p, g):
    grad = g.gradient(u_hat[0])
    return -0.5 * np.sum(grad ** 2, axis=0, keepdims=True)


# (feed, kill, stored dt, warm-up in stored steps, central blob fraction)
GRAY_SCOTT_CONFIGS: Dict[str, Tuple[float, float, float, int, float]] = {
    "gs-alpha": (0.008, 0.046, 30.0, 75, 0.6),
    "gs-beta": (0.020, 0.046, 30.0, 50, 0.6),
    "gs-gamma": (0.024, 0.056, 75.0, 70, 0.6),
    "gs-epsilon": (0.020, 0.056, 15.0, 300, 0.6),
    "gs-delta": (0.028, 0.056, 130.0, 0, 0.6),
    "gs-theta": (0.040, 0.060, 200.0, 0, 0.6),
    "gs-iota": (0.050, 0.0605, 240.0, 0, 0.6),
    "gs-kappa": (0.052, 0.063, 300.0, 15, 0.2),
}
GRAY_SCOTT_STEADY = ("gs-delta", "gs-theta", "gs-iota", "gs-kappa")

VELOCITY = ["u_x", "u_y", "u_z"]


def _build_registry() -> Dict[str, PDESpec]:
    families = {
        "hyp": PDESpec(
            "hyp", ["u"], _hyp_linear, None,
            {"hyper_diffusivity": (5e-5, 5e-4)}, dt_store=0.01,
        ),
        "fisher": PDESpec(
            "fisher", ["u"], _fisher_linear, _fisher_nonlinear,
            {"diffusivity": (1e-4, 0.02), "reactivity": (5.0, 15.0)}, dt_store=0.005,
            clamp=(0.0, 1.0), dissipative=False,
        ),
        "sh": PDESpec(
            "sh", ["u"], _sh_linear, _sh_nonlinear,
            {"reactivity": (0.4, 1.0), "critical_number": (0.8, 1.2)}, dt_store=0.5, substeps=5,
            extent=20.0 * np.pi, dissipative=False,
        ),
        "burgers": PDESpec(
            "burgers", list(VELOCITY), _burgers_linear, _burgers_nonlinear,
            {"viscosity": (0.001, 0.005)}, dt_store=0.01, substeps=50,
        ),
        "kdv": PDESpec(
            "kdv", list(VELOCITY), _kdv_linear, _kdv_nonlinear,
            {"viscosity": (0.1, 0.25)}, dt_store=0.05, substeps=10, extent=(30.0, 120.0),
            fixed_params={"convection": KDV_CONVECTION, "dispersivity": KDV_DISPERSIVITY},
        ),
        "ks": PDESpec(
            "ks", ["u"], _ks_linear, _ks_nonlinear,
            {}, dt_store=0.2, substeps=2, warmup=200, extent=(10.0, 130.0), dissipative=False,
        ),
    }
    for name, (feed, kill, dt_store, warmup, fraction) in GRAY_SCOTT_CONFIGS.items():
        families[name] = PDESpec(
            name, ["c_a", "c_b"], _gs_linear, _gs_nonlinear, {},
            dt_store=dt_store, substeps=int(round(dt_store / GS_SIM_DT)), warmup=warmup,
            extent=GS_EXTENT, initializer="gs_blobs", blob_fraction=fraction,
            fixed_params={
                "feed_rate": feed, "kill_rate": kill,
                "diffusivity_a": GS_DIFFUSIVITY_A, "diffusivity_b": GS_DIFFUSIVITY_B,
            },
        )
    return families


FAMILIES: Dict[str, PDESpec] = _build_registry()


def get_family(name: str) -> PDESpec:
    if name not in FAMILIES:
        raise ValidationError(f"unknown PDE family '{name}'; choose from {sorted(FAMILIES)}", "family")
    return FAMILIES[name]
