"""Input/target pairs drawn from simulation datasets."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..datagen.storage import DatasetContainer
from ..validation import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class PairSample:
    u_in: torch.Tensor
    u_out: torch.Tensor
    params: Optional[torch.Tensor]
    key: str


class PairDataset:
    """Consecutive-snapshot pairs, channels zero-padded to `channels`.

    With history P, the input stacks the P most recent states along channels
    (oldest first).
    """
    def __init__(
        self,
        containers: Sequence[DatasetContainer],
        channels: int,
        history: int = 1,
        param_keys: Optional[Sequence[str]] = None,
        names: Optional[Sequence[str]] = None,
    ):
        if not containers:
            raise ValidationError("PairDataset needs at least one dataset", "containers")
        if history < 1:
            raise ValidationError(f"history must be >= 1, got {history}", "history")
        self.containers = list(containers)
        self.channels = channels
        self.history = history
        self.param_keys = list(param_keys or [])
        self.names = list(names) if names is not None else [f"ds{i}" for i in range(len(containers))]
        self.index: List[Tuple[int, int]] = []
        for d, container in enumerate(self.containers):
            c = container.snapshots.shape[1]
            if c > channels:
                raise ValidationError(
                    f"dataset {self.names[d]} has {c} channels, more than the model's {channels}", "channels"
                )
            for t in range(history - 1, len(container) - 1):
                self.index.append((d, t))
        if not self.index:
            raise ValidationError("datasets hold no snapshot pairs for this history length", "history")
        logger.info(f"PairDataset: {len(self.index)} pairs from {len(self.containers)} dataset(s)")

    def __len__(self) -> int:
        return len(self.index)

    def _padded(self, frame: np.ndarray) -> torch.Tensor:
        tensor = torch.from_numpy(np.ascontiguousarray(frame, dtype=np.float32))
        missing = self.channels - tensor.shape[0]
        if missing:
            tensor = torch.cat([tensor, tensor.new_zeros((missing,) + tuple(tensor.shape[1:]))])
        return tensor

    def __getitem__(self, i: int) -> PairSample:
        d, t = self.index[i]
        snaps = self.containers[d].snapshots
        u_in = torch.cat([self._padded(snaps[s]) for s in range(t - self.history + 1, t + 1)])
        u_out = self._padded(snaps[t + 1])
        params = None
        if self.param_keys:
            values = self.containers[d].params
            params = torch.tensor([float(values[k]) for k in self.param_keys], dtype=torch.float32)
        return PairSample(u_in, u_out, params, f"{self.names[d]}:{t}")
