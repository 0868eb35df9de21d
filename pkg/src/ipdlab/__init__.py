"""Decentralized multi-agent RL on the iterated prisoner's dilemma."""

from .game import (
    Action,
    EpisodeConfig,
    Observation,
    PayoffMatrix,
    Step,
    Trajectory,
    payoff,
    play_episode,
)
from .tabular import BestResponseResult, TabularPolicy, best_response, named, sample_uniform

__all__ = [
    "Action",
    "Observation",
    "PayoffMatrix",
    "EpisodeConfig",
    "Step",
    "Trajectory",
    "payoff",
    "play_episode",
    "TabularPolicy",
    "BestResponseResult",
    "best_response",
    "named",
    "sample_uniform",
]

__version__ = "0.1.0"
