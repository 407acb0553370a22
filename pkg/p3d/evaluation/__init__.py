"""
Evaluation

- rollout: autoregressive rollout under the <x|y> and <Xx|Xy> strategies
- metrics: nRMSE, vorticity, enstrophy graphs and velocity-profile moments
- reporting: metric CSVs and PGM field slices
- diagnostics: parameter counts and multiply-add tallies
"""

from .diagnostics import MacCounter, count_macs, parameter_count, preset_report
from .metrics import (
    EnstrophyGraph,
    ProfileMoments,
    enstrophy_graph,
    enstrophy_l2,
    global_moments,
    nrmse,
    profile_l2,
    profile_moments,
    vorticity_fd,
)
from .reporting import write_graph_csv, write_metrics_csv, write_pgm_slice, write_profile_csv
from .rollout import DEFAULT_ROLLOUT_STEPS, RolloutSpec, Strategy, predict_step, rollout

__all__ = [
    'MacCounter',
    'count_macs',
    'parameter_count',
    'preset_report',
    'EnstrophyGraph',
    'ProfileMoments',
    'enstrophy_graph',
    'enstrophy_l2',
    'global_moments',
    'nrmse',
    'profile_l2',
    'profile_moments',
    'vorticity_fd',
    'write_graph_csv',
    'write_metrics_csv',
    'write_pgm_slice',
    'write_profile_csv',
    'DEFAULT_ROLLOUT_STEPS',
    'RolloutSpec',
    'Strategy',
    'predict_step',
    'rollout',
]
