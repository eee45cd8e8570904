"""Simulation-based parameter inference for state-space models.

Truncated sequential neural likelihood (T-SNL) and its baselines: SNL,
SMC-ABC with adaptive tolerances and bootstrap-particle-filter MCMC.
"""

from .abc import AbcConfig, estimate_ratio_alpha, ratio_supremum, smc_abc_run
from .inference import (Strategy, amortized_extend, build_round_dataset, exact_grid_posterior, select_lag,
                        snl_run, truncated_loglik, tsnl_run)
from .metrics import MetricReport, acf_norm, bias_stdev, e_kde, e_min, metric_report, rank_statistic
from .models import LgssmModel, LvModel, SvModel, gillespie_simulate, kalman_loglik, make_model
from .nde import ConditionalFlow, FlowConfig, TrainConfig, flow_logprob, flow_sample, param_count, train_flow
from .particle import BpfConfig, bpf_loglik, bpf_mcmc
from .priors import Prior
from .samplers import McmcConfig, PosteriorSamples, ess_sample, rwm_sample
from .ssm import CostLedger, LaggedDataset, Trajectory, make_lagged_dataset, simulate_trajectory

__version__ = "0.1.0"
