"""Bayesian non-homogeneous hidden Markov models for zero-inflated count
panels, with spike-and-slab variable selection on both the transition and
emission regressions."""

__version__ = "0.1.0"

from .data import ChainState, HmmSpec, HyperPriors, PanelDataset
from .mcmc import ChainConfig, ChainSamples, run_chain
from .rng import RngHandle
from .simulate import (SimulationSpec, generate_dataset, zinb_default_spec,
                       poisson_default_spec)

__all__ = [
    "ChainConfig", "ChainSamples", "ChainState", "HmmSpec", "HyperPriors",
    "PanelDataset", "RngHandle", "SimulationSpec", "generate_dataset",
    "zinb_default_spec", "poisson_default_spec", "run_chain", "__version__",
]
