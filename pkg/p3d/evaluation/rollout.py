"""
Autoregressive rollout under the crop strategies.

A strategy tag <x|y> names a model trained on x³ crops that runs inference
on y³ tiles of the domain (y equal to the domain extent means one
whole-domain forward). The X-prefixed tag <Xx|Xy> runs every y³ tile as a
set of x³ regions coordinated by the context model.
"""
import logging
import re
from dataclasses import dataclass
from typing import List, Optional

import torch
import torch.nn as nn

from ..models.backbone import P3D
from ..models.conditioning import Conditioning
from ..models.context import ContextualP3D, RegionLayout
from ..training.sampler import euler_sample
from ..validation import ValidationError, require_rank

logger = logging.getLogger(__name__)

DEFAULT_ROLLOUT_STEPS = 16

_TAG = re.compile(r"^<\s*(X?)(\d+)\s*\|\s*(X?)(\d+)\s*>$")


@dataclass(frozen=True)
class Strategy:
    """Crop strategy <x|y> or <Xx|Xy>"""
    train_res: int
    infer_res: int
    context: bool = False

    @classmethod
    def parse(cls, tag: str) -> 'Strategy':
        match = _TAG.match(tag.strip())
        if not match:
            raise ValidationError(f"strategy must look like '<16|32>' or '<X16|X32>', got {tag!r}", "strategy")
        x_flag, x, y_flag, y = match.groups()
        if x_flag != y_flag:
            raise ValidationError(f"strategy {tag!r} mixes context and plain sides", "strategy")
        return cls(int(x), int(y), context=bool(x_flag))

    @property
    def tag(self) -> str:
        p = "X" if self.context else ""
        return f"<{p}{self.train_res}|{p}{self.infer_res}>"

    def validate(self, domain) -> None:
        for n in domain:
            if n % self.infer_res != 0:
                raise ValidationError(
                    f"domain {tuple(domain)} is not tiled by {self.infer_res}³ under {self.tag}", "domain"
                )
        if self.context and self.infer_res % self.train_res != 0:
            raise ValidationError(
                f"{self.tag}: inference resolution must be a multiple of the crop resolution", "strategy"
            )


@dataclass
class RolloutSpec:
    strategy: Strategy
    steps: int = DEFAULT_ROLLOUT_STEPS
    cond: Optional[Conditioning] = None
    history: int = 1
    sample_steps: Optional[int] = None  # flow-matching models: Euler steps per prediction

    def __post_init__(self):
        if isinstance(self.strategy, str):
            self.strategy = Strategy.parse(self.strategy)
        if self.steps < 1:
            raise ValidationError(f"rollout needs at least one step, got {self.steps}", "steps")
        if self.history < 1:
            raise ValidationError(f"history must be >= 1, got {self.history}", "history")


def _backbone(model: nn.Module) -> P3D:
    return model.backbone if isinstance(model, ContextualP3D) else model


class _TileForward:
    """One prediction step on a single y³ tile."""
    def __init__(self, model: nn.Module, strategy: Strategy, cond, sample_steps, generator):
        self.model = model
        self.strategy = strategy
        self.cond = cond
        self.sample_steps = sample_steps
        self.generator = generator
        if strategy.context and not isinstance(model, ContextualP3D):
            raise ValidationError(f"{strategy.tag} needs a context model", "model")

    def _net(self, u_in: torch.Tensor):
        if not self.strategy.context:
            return _backbone(self.model)
        layout = self.model.layout_for(tuple(u_in.shape[2:]), self.strategy.train_res)

        def net(u, x_t=None, cond=None):
            return self.model.forward_regions(u, x_t, cond, layout)
        return net

    def __call__(self, u_in: torch.Tensor) -> torch.Tensor:
        net = self._net(u_in)
        if self.sample_steps is None:
            return net(u_in, None, self.cond)
        out_channels = _backbone(self.model).config.out_channels
        shape = (u_in.shape[0], out_channels) + tuple(u_in.shape[2:])
        return euler_sample(net, u_in, self.cond, steps=self.sample_steps, generator=self.generator, shape=shape)


def predict_step(model: nn.Module, u_in: torch.Tensor, spec: RolloutSpec, generator=None) -> torch.Tensor:
    """u_{t+1} from the stacked history u_in [B, P·C, X, Y, Z]."""
    require_rank(u_in, 5, "u_in")
    strategy = spec.strategy
    domain = tuple(u_in.shape[2:])
    strategy.validate(domain)
    forward = _TileForward(model, strategy, spec.cond, spec.sample_steps, generator)
    if domain == (strategy.infer_res,) * 3:
        return forward(u_in)
    tiles = RegionLayout.cubic(domain, strategy.infer_res)
    return tiles.assemble([forward(tile) for tile in tiles.split(u_in)])


def rollout(
    model: nn.Module,
    u0: torch.Tensor,
    spec: RolloutSpec,
    generator: Optional[torch.Generator] = None,
) -> List[torch.Tensor]:
    """Feed each prediction back as input for spec.steps steps.

    u0 is [B, C, X, Y, Z] for single-state models, or [B, P, C, X, Y, Z]
    holding the last P states (oldest first) when spec.history > 1.
    Returns [u_0, u_1, ..., u_steps] with the most recent initial state first.
    """
    if spec.history == 1:
        require_rank(u0, 5, "u0")
        window = [u0]
    else:
        require_rank(u0, 6, "u0")
        if u0.shape[1] != spec.history:
            raise ValidationError(f"u0 holds {u0.shape[1]} states, history is {spec.history}", "u0")
        window = list(u0.unbind(dim=1))
    spec.strategy.validate(tuple(u0.shape[-3:]))

    model.eval()
    states = [window[-1]]
    with torch.no_grad():
        for step in range(spec.steps):
            u_in = window[0] if len(window) == 1 else torch.cat(window, dim=1)
            u_next = predict_step(model, u_in, spec, generator)
            if not torch.isfinite(u_next).all():
                logger.warning(f"Rollout produced non-finite values at step {step + 1}")
            states.append(u_next)
            window = window[1:] + [u_next]
            logger.debug(f"rollout {spec.strategy.tag} step {step + 1}/{spec.steps}")
    return states
