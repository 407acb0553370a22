"""
Time integration of one PDE family into a dataset container.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..validation import ValidationError
from .etdrk import etdrk_precompute, etdrk_step
from .families import PDESpec, SpectralGrid
from .storage import DatasetContainer

logger = logging.getLogger(__name__)

STORE_DTYPES = {"f32": np.float32, "f64": np.float64}


class SimulationError(Exception):
    """Raised when a simulation state becomes non-finite"""
    def __init__(self, message: str, step: Optional[int] = None):
        self.message = message
        self.step = step
        super().__init__(message)


@dataclass
class SimConfig:
    """Grid, cadence and seed of one simulation; None falls back to the family default"""
    resolution: Tuple[int, int, int] = (32, 32, 32)
    extent: Optional[float] = None
    dt_store: Optional[float] = None
    substeps: Optional[int] = None
    warmup: Optional[int] = None
    snapshots: int = 30
    seed: int = 0
    order: int = 2
    store_dtype: str = "f32"

    def validate(self) -> None:
        if len(self.resolution) != 3 or min(self.resolution) < 2:
            raise ValidationError(f"resolution must be three extents >= 2, got {self.resolution}", "resolution")
        if self.substeps is not None and self.substeps < 1:
            raise ValidationError(f"substeps must be >= 1, got {self.substeps}", "substeps")
        if self.snapshots < 1:
            raise ValidationError(f"snapshots must be >= 1, got {self.snapshots}", "snapshots")
        if self.store_dtype not in STORE_DTYPES:
            raise ValidationError(f"store_dtype must be one of {sorted(STORE_DTYPES)}", "store_dtype")
        if any(n & (n - 1) for n in self.resolution):
            logger.warning(f"Resolution {self.resolution} is not a power of two; FFTs will be slower")


def simulate(
    spec: PDESpec,
    cfg: SimConfig,
    params: Optional[Dict[str, float]] = None,
    initial_state: Optional[np.ndarray] = None,
) -> DatasetContainer:
    """Run warm-up, then store `cfg.snapshots` states spaced by dt_store.

    The first stored snapshot is the state after warm-up.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = spec.sample_params(rng)
    else:
        params = {**spec.fixed_params, **params}
        spec.validate_params(params)
    extent = cfg.extent if cfg.extent is not None else spec.sample_extent(rng)
    dt_store = cfg.dt_store if cfg.dt_store is not None else spec.dt_store
    substeps = cfg.substeps if cfg.substeps is not None else spec.substeps
    warmup = cfg.warmup if cfg.warmup is not None else spec.warmup
    resolution = tuple(cfg.resolution)

    grid = SpectralGrid(resolution, (extent,) * 3)
    if initial_state is None:
        initial_state = spec.initial_state(rng, resolution)
    u0 = np.asarray(initial_state, dtype=np.float64)
    if u0.shape != (spec.channels,) + resolution:
        raise ValidationError(
            f"initial state shape {u0.shape} does not match {(spec.channels,) + resolution}", "initial_state"
        )

    u_hat = grid.to_spectral(u0)
    if spec.nonlinear is not None:
        u_hat = u_hat * grid.mask
    coeffs = etdrk_precompute(spec.linear_symbol(params, grid), dt_store / substeps, cfg.order)
    nonlinear = spec.make_nonlinear(params, grid)

    logger.info(
        f"Simulating {spec.name} at {resolution} (extent {extent:.4g}, dt {dt_store}/{substeps}, "
        f"warmup {warmup}, ETDRK{cfg.order}, seed {cfg.seed})"
    )
    frames = []
    total = warmup + cfg.snapshots - 1
    for stored_step in range(total + 1):
        if stored_step >= warmup:
            state = grid.to_physical(u_hat)
            if not np.all(np.isfinite(state)):
                logger.error(f"{spec.name}: non-finite state at stored step {stored_step}")
                raise SimulationError(f"{spec.name} diverged at stored step {stored_step}", stored_step)
            frames.append(state.astype(STORE_DTYPES[cfg.store_dtype]))
        if stored_step == total:
            break
        for _ in range(substeps):
            u_hat = etdrk_step(u_hat, nonlinear, coeffs)
        if not np.all(np.isfinite(u_hat)):
            logger.error(f"{spec.name}: non-finite spectrum after stored step {stored_step + 1}")
            raise SimulationError(f"{spec.name} diverged at stored step {stored_step + 1}", stored_step + 1)

    manifest = {
        "family": spec.name,
        "channel_names": list(spec.channel_names),
        "params": params,
        "extent": extent,
        "dt_store": dt_store,
        "substeps": substeps,
        "warmup": warmup,
        "seed": cfg.seed,
        "order": cfg.order,
        "resolution": list(resolution),
    }
    return DatasetContainer(manifest, np.stack(frames))
