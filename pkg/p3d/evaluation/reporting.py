"""
CSV tables and PGM slices for evaluation runs.
"""
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Union

import numpy as np
import pandas as pd
from PIL import Image

from ..validation import ValidationError
from .metrics import EnstrophyGraph, ProfileMoments

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["run_id", "step", "metric", "value"]


def write_metrics_csv(rows: Iterable[Dict], path: Union[str, Path]) -> Path:
    """Rows of (run id, step, metric, value)."""
    frame = pd.DataFrame(list(rows), columns=METRIC_COLUMNS)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} metric rows to {path}")
    return path


def read_metrics_csv(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path)
    if list(frame.columns) != METRIC_COLUMNS:
        raise ValidationError(f"{path} is not a metrics table: columns {list(frame.columns)}", "path")
    return frame


def write_graph_csv(graph: EnstrophyGraph, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"shell": graph.shells, "enstrophy": graph.values}).to_csv(path, index=False)
    return path


def write_profile_csv(profile: ProfileMoments, m: int, path: Union[str, Path]) -> Path:
    """Moment m of a profile against the wall-normal coordinate."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    name = {1: "mean", 2: "variance", 3: "skewness"}.get(m, "moment")
    pd.DataFrame({"coord": profile.coords, name: profile.moment(m)}).to_csv(path, index=False)
    return path


def field_slice(field: np.ndarray, axis: int = 2, index: Optional[int] = None) -> np.ndarray:
    """2-D slice of a [X, Y, Z] field through `index` (the centre by default) along `axis`."""
    if hasattr(field, "detach"):
        field = field.detach().cpu().numpy()
    field = np.asarray(field)
    if field.ndim != 3:
        raise ValidationError(f"slices need a [X, Y, Z] field, got shape {field.shape}", "field")
    if index is None:
        index = field.shape[axis] // 2
    return np.take(field, index, axis=axis)


def write_pgm_slice(
    field: np.ndarray,
    path: Union[str, Path],
    axis: int = 2,
    index: Optional[int] = None,
    value_range: Optional[tuple] = None,
) -> Path:
    """8-bit greyscale PGM of one slice, linearly mapped from value_range (slice min/max by default)."""
    plane = field_slice(field, axis, index).astype(np.float64)
    lo, hi = value_range if value_range is not None else (float(plane.min()), float(plane.max()))
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    pixels = np.clip(np.round((plane - lo) * scale), 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="L").save(path, format="PPM")
    return path
