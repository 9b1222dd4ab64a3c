"""Bayesian learning of noisy finite MDPs.

Infers a controller's optimal value function from state/action data with a
parameter-expanded data-augmentation Gibbs sampler, and predicts/mimics the
controller's future actions.  Includes a Tetris environment for generating
synthetic data, recording human play and evaluating posterior prediction.
"""

from noisymdp.mdp import (
    RMatrix,
    RewardFunction,
    TransitionModel,
    ValueFunction,
    evaluate_policy,
    optimal_policy,
    transition_matrix,
    value_iteration,
)
from noisymdp.probability import InverseGammaParams, RngStream, SumZeroGaussianPrior
from noisymdp.choice import Dataset, Observation
from noisymdp.sampler import PosteriorSamples, SamplerConfig, TransformParams, run_chain

__all__ = [
    "Dataset",
    "InverseGammaParams",
    "Observation",
    "PosteriorSamples",
    "RMatrix",
    "RewardFunction",
    "RngStream",
    "SamplerConfig",
    "SumZeroGaussianPrior",
    "TransformParams",
    "TransitionModel",
    "ValueFunction",
    "evaluate_policy",
    "optimal_policy",
    "run_chain",
    "transition_matrix",
    "value_iteration",
]
