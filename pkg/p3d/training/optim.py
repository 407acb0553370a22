"""AdamW and exponential moving averages of the weights."""
import copy
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import torch
import torch.nn as nn

from ..validation import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_LR = 2e-4
DEFAULT_WD = 1e-15


@dataclass
class OptimizerState:
    """AdamW moments and step counters for a fixed parameter list"""
    params: List[nn.Parameter]
    lr: float = DEFAULT_LR
    wd: float = DEFAULT_WD
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    optimizer: torch.optim.AdamW = field(init=False)

    def __post_init__(self):
        self.params = list(self.params)
        self.optimizer = torch.optim.AdamW(
            self.params, lr=self.lr, betas=self.betas, eps=self.eps, weight_decay=self.wd
        )

    def moments(self) -> Dict[int, Dict[str, torch.Tensor]]:
        """Per-parameter-index state tensors (exp_avg, exp_avg_sq, step)."""
        out = {}
        for i, p in enumerate(self.params):
            state = self.optimizer.state.get(p)
            if state:
                out[i] = {k: v if torch.is_tensor(v) else torch.tensor(v) for k, v in state.items()}
        return out

    def load_moments(self, moments: Dict[int, Dict[str, torch.Tensor]]) -> None:
        for i, state in moments.items():
            p = self.params[i]
            for key in ("exp_avg", "exp_avg_sq"):
                if state[key].shape != p.shape:
                    raise ValidationError(f"optimizer moment {key} shape mismatch for parameter {i}", key)
            self.optimizer.state[p] = {k: v.clone() for k, v in state.items()}


def adamw_step(
    params: Sequence[nn.Parameter],
    grads: Sequence[torch.Tensor],
    state: OptimizerState,
) -> None:
    """Decoupled-weight-decay AdamW update with bias correction, in place."""
    if len(params) != len(state.params) or len(grads) != len(params):
        raise ValidationError("params, grads and optimizer state must align", "params")
    for p, owned, g in zip(params, state.params, grads):
        if p is not owned:
            raise ValidationError("parameter list does not match the optimizer state", "params")
        if g is not None and g.shape != p.shape:
            raise ValidationError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(p.shape)}", "grads")
        p.grad = None if g is None else g.detach().clone()
    state.optimizer.step()


@torch.no_grad()
def ema_update(weights: Iterable[torch.Tensor], ema: Iterable[torch.Tensor], decay: float = 0.999) -> None:
    """ema ← decay·ema + (1 - decay)·weights, in place."""
    for w, e in zip(weights, ema):
        if w.shape != e.shape:
            raise ValidationError(f"EMA shape {tuple(e.shape)} != weight shape {tuple(w.shape)}", "ema")
        e.mul_(decay).add_(w, alpha=1.0 - decay)


class EMA:
    """Exponential Moving Average of model parameters."""
    def __init__(self, model: nn.Module, decay: float = 0.999):
        self.model = model
        self.decay = decay
        self.shadow: Dict[str, torch.Tensor] = {
            name: p.detach().clone() for name, p in model.named_parameters()
        }

    def update(self) -> None:
        names = list(self.shadow)
        params = dict(self.model.named_parameters())
        ema_update([params[n].detach() for n in names], [self.shadow[n] for n in names], self.decay)

    def copy_to(self, model: nn.Module) -> None:
        """Write the averaged weights into `model` (same architecture)."""
        with torch.no_grad():
            for name, p in model.named_parameters():
                if name in self.shadow:
                    p.copy_(self.shadow[name])

    def averaged_model(self) -> nn.Module:
        model = copy.deepcopy(self.model)
        self.copy_to(model)
        return model

    def state_dict(self) -> Dict[str, torch.Tensor]:
        return dict(self.shadow)

    def load_state_dict(self, shadow: Dict[str, torch.Tensor]) -> None:
        missing = set(self.shadow) - set(shadow)
        if missing:
            raise ValidationError(f"EMA state lacks {sorted(missing)[:3]}", "ema")
        self.shadow = {k: v.clone() for k, v in shadow.items() if k in self.shadow}
