"""On-disk cache of frozen-encoder outputs keyed by (checkpoint digest, crop id)."""
import json
import logging
from pathlib import Path
from typing import Optional, Union

import torch

from ..models.backbone import BackboneState
from ..numerics.blobs import BlobError, read_blob, write_blob

logger = logging.getLogger(__name__)


class LatentCache:
    def __init__(self, root: Union[str, Path], digest: str):
        self.root = Path(root) / digest
        self.hits = 0
        self.misses = 0

    def _dir(self, key: str) -> Path:
        return self.root / key.replace("/", "_").replace(":", "_")

    def get(self, key: str) -> Optional[BackboneState]:
        entry = self._dir(key)
        meta_path = entry / "meta.json"
        if not meta_path.is_file():
            self.misses += 1
            return None
        try:
            meta = json.loads(meta_path.read_text())
            tokens = torch.from_numpy(read_blob(entry / "tokens.blob")[1])
            residuals = [
                torch.from_numpy(read_blob(entry / f"residual_{i}.blob")[1]) for i in range(meta["residuals"])
            ]
        except (BlobError, ValueError, KeyError) as e:
            logger.warning(f"Discarding unreadable cache entry {entry}: {e}")
            self.misses += 1
            return None
        self.hits += 1
        return BackboneState(tokens, tuple(meta["grid"]), residuals)

    def put(self, key: str, state: BackboneState) -> None:
        entry = self._dir(key)
        write_blob(entry / "tokens.blob", "tokens", state.tokens)
        for i, r in enumerate(state.residuals):
            write_blob(entry / f"residual_{i}.blob", f"residual_{i}", r)
        (entry / "meta.json").write_text(json.dumps({"grid": list(state.grid), "residuals": len(state.residuals)}))
