"""
Training

- losses: MSE and flow-matching objectives
- sampler: explicit Euler sampling of the learned flow
- crops: paired random crops
- setups: training modes and gradient scopes
- optim: AdamW and EMA
- data: snapshot-pair datasets
- cache: on-disk cache of frozen-encoder outputs
- trainer: the training loop
"""

from .cache import LatentCache
from .crops import crop_sample
from .data import PairDataset, PairSample
from .losses import SIGMA_MIN, FlowState, flow_state, fm_loss, fm_sample_xt, fm_target, mse_loss
from .optim import EMA, OptimizerState, adamw_step, ema_update
from .sampler import DEFAULT_STEPS, euler_sample
from .setups import Objective, TrainMode, TrainSetup, grad_scope
from .trainer import Trainer, TrainingError

__all__ = [
    'LatentCache',
    'crop_sample',
    'PairDataset',
    'PairSample',
    'SIGMA_MIN',
    'FlowState',
    'flow_state',
    'fm_loss',
    'fm_sample_xt',
    'fm_target',
    'mse_loss',
    'EMA',
    'OptimizerState',
    'adamw_step',
    'ema_update',
    'DEFAULT_STEPS',
    'euler_sample',
    'Objective',
    'TrainMode',
    'TrainSetup',
    'grad_scope',
    'Trainer',
    'TrainingError',
]
