"""Dataset containers: a JSON manifest plus one tensor blob per snapshot."""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..numerics.blobs import BlobError, dtype_code, read_blob, write_blob

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SNAPSHOT_DIR = "snapshots"


class DatasetError(Exception):
    """Raised for missing, corrupt or inconsistent datasets"""
    def __init__(self, message: str, path: Union[str, Path, None] = None):
        self.message = message
        self.path = str(path) if path is not None else None
        super().__init__(f"{message} ({self.path})" if self.path else message)


@dataclass
class DatasetContainer:
    """One simulation: manifest metadata and snapshots [T, C, X, Y, Z]"""
    manifest: Dict[str, Any]
    snapshots: np.ndarray

    @property
    def family(self) -> str:
        return self.manifest["family"]

    @property
    def channel_names(self) -> List[str]:
        return list(self.manifest["channel_names"])

    @property
    def params(self) -> Dict[str, float]:
        return dict(self.manifest.get("params", {}))

    def __len__(self) -> int:
        return self.snapshots.shape[0]


def _snapshot_path(root: Path, index: int) -> Path:
    return root / SNAPSHOT_DIR / f"{index:06d}.blob"


def write_dataset(container: DatasetContainer, path: Union[str, Path]) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    snapshots = container.snapshots
    manifest = dict(container.manifest)
    manifest.update({
        "snapshot_count": int(snapshots.shape[0]),
        "shape": list(snapshots.shape[1:]),
        "dtype": dtype_code(snapshots),
    })
    for i, frame in enumerate(snapshots):
        write_blob(_snapshot_path(root, i), f"snapshot_{i}", frame)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Wrote {manifest['snapshot_count']} snapshots of {manifest['family']} to {root}")
    return root


def read_dataset(path: Union[str, Path]) -> DatasetContainer:
    root = Path(path)
    manifest_path = root / MANIFEST
    if not manifest_path.is_file():
        logger.error(f"Dataset manifest missing at {manifest_path}")
        raise DatasetError("manifest.json not found", root)
    try:
        manifest = json.loads(manifest_path.read_text())
        count = int(manifest["snapshot_count"])
        shape = tuple(manifest["shape"])
        dtype = manifest["dtype"]
    except (ValueError, KeyError) as e:
        raise DatasetError(f"invalid manifest: {e}", manifest_path) from e

    frames = []
    for i in range(count):
        blob_path = _snapshot_path(root, i)
        try:
            _, frame = read_blob(blob_path)
        except BlobError as e:
            logger.error(f"Snapshot {i} unreadable: {e}")
            raise DatasetError(f"snapshot {i}: {e.message}", blob_path) from e
        if frame.shape != shape or dtype_code(frame) != dtype:
            raise DatasetError(
                f"snapshot {i} has shape {frame.shape}/{dtype_code(frame)}, manifest says {shape}/{dtype}",
                blob_path,
            )
        frames.append(frame)
    extra = _snapshot_path(root, count)
    if extra.exists():
        raise DatasetError(f"found more snapshot blobs than the manifest count {count}", root)
    if len(manifest.get("channel_names", [])) != shape[0]:
        raise DatasetError("channel names do not match the channel count", manifest_path)
    return DatasetContainer(manifest, np.stack(frames) if frames else np.zeros((0,) + shape))


def list_datasets(root: Union[str, Path]) -> List[Path]:
    """Dataset directories below root, sorted by name."""
    root = Path(root)
    return sorted(p.parent for p in root.rglob(MANIFEST))


def split_indices(
    count: int, test_fraction: float = 1.0 / 6.0, val_fraction: float = 0.15, seed: int = 0,
) -> Dict[str, List[int]]:
    """Last `test_fraction` of simulations for test; a seeded split of the rest for validation."""
    n_test = int(round(count * test_fraction))
    head = list(range(count - n_test))
    test = list(range(count - n_test, count))
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(head).tolist()
    n_val = int(round(len(head) * val_fraction))
    val = sorted(shuffled[:n_val])
    train = sorted(shuffled[n_val:])
    return {"train": train, "val": val, "test": test}


def dataset_digest(path: Union[str, Path]) -> str:
    """SHA-256 over the manifest and every snapshot blob, in index order."""
    root = Path(path)
    manifest_path = root / MANIFEST
    if not manifest_path.is_file():
        raise DatasetError("manifest.json not found", root)
    digest = hashlib.sha256(manifest_path.read_bytes())
    count = json.loads(manifest_path.read_text()).get("snapshot_count", 0)
    for i in range(count):
        digest.update(_snapshot_path(root, i).read_bytes())
    return digest.hexdigest()
