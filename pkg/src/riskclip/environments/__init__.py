"""Desk-scale experiment environments and the multi-round deployment loop."""

from .active_learning import (ALConfig, FeasibilityModel, GPModel,
                              active_learning_run, build_feasibility, gp_fit,
                              gp_posterior_mean, gp_posterior_variance,
                              load_dataset_csv, pca_first_component,
                              synthetic_tabular)
from .claims import (FdrExperimentConfig, fdr_experiment, summarize_fdr_trials,
                     synthetic_claims)
from .gaussian import GaussianPairEnv
from .rounds import (RoundConfig, RoundLog, RoundState, cpc_round,
                     improve_by_tilting, run_rounds)
from .sequences import SequenceEnv, make_sequence_env, sequence_opt_run

__all__ = [
    "ALConfig", "FeasibilityModel", "GPModel", "active_learning_run",
    "build_feasibility", "gp_fit", "gp_posterior_mean", "gp_posterior_variance",
    "load_dataset_csv", "pca_first_component", "synthetic_tabular",
    "FdrExperimentConfig", "fdr_experiment", "summarize_fdr_trials",
    "synthetic_claims", "GaussianPairEnv", "RoundConfig", "RoundLog",
    "RoundState", "cpc_round", "improve_by_tilting", "run_rounds",
    "SequenceEnv", "make_sequence_env", "sequence_opt_run",
]
