"""Batch multi-agent fitted Q iteration with tree-kernel approximators."""

from .amafqi import AmafqiModel, LocalQ, amafqi_run
from .errors import ConfigurationError, ConvergenceError, DimensionError, InconclusivePolicyError
from .forest import ForestParams, TreeEnsemble, build_ensemble, classify, kernel_weights, predict_regression
from .fqi import CentralQ, fqi_run, fqi_value
from .mdp import BatchDataset, MdpSpec, evaluate_policy, generate_random_mdp, sample_batch, step
from .policy import PolicyTable, generalize, greedy_gap_audit

__version__ = "0.1.0"
