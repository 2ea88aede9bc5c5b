"""Rare event probability estimation via trained 1-D bias potentials.

The package estimates P(R(theta) >= T) for a scalar quantity of interest R,
with theta following either a prior (traditional reliability setting) or a
Bayesian posterior. The core estimator shapes a one-dimensional bias
potential so that the biased density of R matches a chosen reference
density; a subset-sampling baseline is included for comparison.
"""

from rareebm.densities import Gaussian, Gev, GridFunction, kde_gaussian
from rareebm.bias import RbfBias, GridBias
from rareebm.estimator import free_energy_from_bias, tail_probability
from rareebm.problems import RareEventQuery, contamination_problem, four_branch_problem, load_capacity_problem
from rareebm.train import TrainConfig, train_bias_potential
from rareebm.subset import SubsetConfig, subset_estimate
from rareebm.harness import load_config, replicate_table, run_experiment

__all__ = [
    "Gaussian",
    "Gev",
    "GridFunction",
    "kde_gaussian",
    "RbfBias",
    "GridBias",
    "free_energy_from_bias",
    "tail_probability",
    "RareEventQuery",
    "contamination_problem",
    "four_branch_problem",
    "load_capacity_problem",
    "TrainConfig",
    "train_bias_potential",
    "SubsetConfig",
    "subset_estimate",
    "load_config",
    "run_experiment",
    "replicate_table",
]
