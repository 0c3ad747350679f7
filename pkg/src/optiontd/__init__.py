"""Gradient-corrected temporal-difference learning over linear options.

A library and experiment harness: SMDP/MDP domain types, a noisy four-room
gridworld and a continuous rooms world, one-hot and radial-basis features,
randomly generated multi-timescale linear options, two-timescale
gradient-corrected TD learning with least-squares and expectation-model
baselines, depth-limited rollout search, and a seeded CSV-emitting runner.
"""

__version__ = "0.1.0"

from .core import (
    Action,
    ContinuousState,
    DiscreteState,
    DivergenceError,
    FloorColor,
    PrimitiveTransition,
    SmdpTransition,
    discounted_accumulate,
    effective_discount,
    run_episode,
)
from .features import FeatureVector, RbfGrid, rbf_features, tabular_features

__all__ = [
    "Action",
    "ContinuousState",
    "DiscreteState",
    "DivergenceError",
    "FeatureVector",
    "FloorColor",
    "PrimitiveTransition",
    "RbfGrid",
    "SmdpTransition",
    "__version__",
    "discounted_accumulate",
    "effective_discount",
    "rbf_features",
    "run_episode",
    "tabular_features",
]
