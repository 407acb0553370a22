"""
Training loop shared by pretraining and context finetuning.
"""
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import pandas as pd
import torch
import torch.nn as nn

from ..models.checkpoint import load_checkpoint, save_checkpoint
from ..models.conditioning import Conditioning
from ..models.context import ContextualP3D
from ..validation import ValidationError
from .crops import crop_offsets
from .data import PairDataset
from .losses import flow_state, fm_loss, mse_loss
from .optim import EMA, OptimizerState, adamw_step
from .setups import Objective, TrainMode, TrainSetup, grad_scope

logger = logging.getLogger(__name__)

LOSS_LOG = "loss.csv"
LOSS_COLUMNS = ["step", "loss", "lr", "grad_norm"]


class TrainingError(Exception):
    """Raised when training produces a non-finite loss"""
    def __init__(self, message: str, step: Optional[int] = None, dump_path: Optional[str] = None):
        self.message = message
        self.step = step
        self.dump_path = dump_path
        super().__init__(message)


class Trainer:
    def __init__(
        self,
        model: nn.Module,
        setup: TrainSetup,
        data: PairDataset,
        out_dir: Union[str, Path],
        seed: int = 0,
        cache=None,
    ):
        self.model = model
        self.setup = setup
        self.data = data
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.cache = cache
        if setup.mode.uses_context and not isinstance(model, ContextualP3D):
            raise ValidationError(f"{setup.mode.value} needs a ContextualP3D model", "mode")
        self.generator = torch.Generator()
        self.generator.manual_seed(seed)
        self.params: List[nn.Parameter] = [p for p in model.parameters() if p.requires_grad]
        self.optimizer = OptimizerState(self.params, lr=setup.lr, wd=setup.wd)
        self.ema = EMA(model, setup.ema_decay)
        self.step = 0
        self.history: List[dict] = []

    def resume(self, checkpoint_dir: Union[str, Path]) -> None:
        """Restore weights, EMA, optimizer moments, generator state and loss history."""
        ckpt = load_checkpoint(checkpoint_dir, self.model)
        if ckpt.ema:
            self.ema.load_state_dict(ckpt.ema)
        if ckpt.optimizer:
            self.optimizer.load_moments(ckpt.optimizer)
        if ckpt.rng_state is not None:
            self.generator.set_state(ckpt.rng_state.to(torch.uint8))
        self.step = ckpt.step
        log = self.out_dir / LOSS_LOG
        if log.is_file():
            frame = pd.read_csv(log)
            self.history = frame[frame["step"] <= self.step].to_dict("records")
        logger.info(f"Resumed from {checkpoint_dir} at step {self.step}")

    def _draw_batch(self) -> Tuple[torch.Tensor, torch.Tensor, Optional[Conditioning], List[str]]:
        setup = self.setup
        crop = setup.mode is not TrainMode.FULL_DOMAIN
        indices = torch.randint(0, len(self.data), (setup.batch,), generator=self.generator).tolist()
        ins, outs, params, keys = [], [], [], []
        for i in indices:
            sample = self.data[i]
            u_in, u_out, key = sample.u_in, sample.u_out, sample.key
            if crop:
                size = (setup.crop_size,) * 3
                ox, oy, oz = crop_offsets(u_in.shape[-3:], size, self.generator)
                window = (..., slice(ox, ox + size[0]), slice(oy, oy + size[1]), slice(oz, oz + size[2]))
                u_in, u_out = u_in[window], u_out[window]
                key = f"{key}@{ox}-{oy}-{oz}"
            ins.append(u_in)
            outs.append(u_out)
            params.append(sample.params)
            keys.append(key)
        cond = Conditioning(params=torch.stack(params)) if params[0] is not None else None
        return torch.stack(ins), torch.stack(outs), cond, keys

    def _forward(self, u_in, x_t, cond, keys) -> torch.Tensor:
        setup = self.setup
        if not setup.mode.uses_context:
            return self.model(u_in, x_t, cond)
        layout = self.model.layout_for(tuple(u_in.shape[2:]), setup.region_size)
        mask = grad_scope(setup, layout.count, self.model.backbone.decoder_block_count, self.generator)
        crop_keys = None
        if self.cache is not None:
            batch_id = hashlib.sha1("|".join(keys).encode("utf-8")).hexdigest()[:16]
            crop_keys = [f"{batch_id}-r{i}" for i in range(layout.count)]
        return self.model.forward_regions(u_in, x_t, cond, layout, mask, self.cache, crop_keys)

    def compute_loss(self, u_in, u_out, cond, keys) -> torch.Tensor:
        if self.setup.objective is Objective.FLOW:
            flow = flow_state(u_out, self.generator, self.setup.sigma_min)
            cond = (cond or Conditioning()).with_time(flow.t)
            pred = self._forward(u_in, flow.x_t, cond, keys)
            return fm_loss(pred, u_out, flow.eps, self.setup.sigma_min)
        return mse_loss(self._forward(u_in, None, cond, keys), u_out)

    def _dump_diagnostics(self, loss: float, batch) -> Path:
        dump = self.out_dir / "diagnostics" / f"step_{self.step:07d}"
        save_checkpoint(dump / "model", self.model, step=self.step, seed=self.seed)
        u_in, u_out, _, keys = batch
        report = {
            "step": self.step,
            "loss": repr(loss),
            "keys": keys,
            "input_finite": bool(torch.isfinite(u_in).all()),
            "target_finite": bool(torch.isfinite(u_out).all()),
            "max_abs_param": max(float(p.detach().abs().max()) for p in self.params),
        }
        (dump / "report.json").write_text(json.dumps(report, indent=2))
        return dump

    def train_step(self) -> Tuple[float, float]:
        batch = self._draw_batch()
        loss = self.compute_loss(*batch)
        if not torch.isfinite(loss):
            dump = self._dump_diagnostics(float(loss), batch)
            logger.error(f"Non-finite loss at step {self.step}; diagnostics in {dump}")
            raise TrainingError(f"non-finite loss at step {self.step}", self.step, str(dump))
        grads = torch.autograd.grad(loss, self.params, allow_unused=True)
        grad_norm = math.sqrt(sum(float(g.pow(2).sum()) for g in grads if g is not None))
        adamw_step(self.params, grads, self.optimizer)
        self.ema.update()
        self.step += 1
        return float(loss), grad_norm

    def save(self) -> Path:
        path = self.out_dir / "checkpoints" / f"step_{self.step:07d}"
        save_checkpoint(
            path, self.model, step=self.step, seed=self.seed,
            ema=self.ema.state_dict(), optimizer=self.optimizer.moments(),
            rng_state=self.generator.get_state(), extra={"setup": self.setup.to_dict()},
        )
        self.out_dir.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.history, columns=LOSS_COLUMNS).to_csv(self.out_dir / LOSS_LOG, index=False)
        return path

    def train_loop(self) -> Iterator[Path]:
        """Run until setup.steps, yielding each checkpoint directory as it is written."""
        setup = self.setup
        self.model.train()
        logger.info(
            f"Training {setup.mode.value}/{setup.objective.value} from step {self.step} to {setup.steps} "
            f"(batch {setup.batch}, lr {setup.lr})"
        )
        while self.step < setup.steps:
            loss, grad_norm = self.train_step()
            self.history.append({"step": self.step, "loss": loss, "lr": setup.lr, "grad_norm": grad_norm})
            if self.step % setup.log_every == 0:
                logger.info(f"step {self.step}: loss {loss:.6e}, grad norm {grad_norm:.3e}")
            if self.step % setup.checkpoint_every == 0 or self.step == setup.steps:
                yield self.save()

    @property
    def losses(self) -> List[float]:
        return [row["loss"] for row in self.history]
