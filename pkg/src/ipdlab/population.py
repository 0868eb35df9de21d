"""Mixed-pool matchup scheduling and the two ablation pathways."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .dataset import TrajectoryDataset
from .errors import ConfigError
from .game import N_OBSERVATIONS, EpisodeConfig
from .model import ModelInputs
from .tabular import TabularPolicy, sample_uniform

Ablation = Literal["none", "opponent_id", "no_tabular"]

COND_DIM = 10  # (Start, CC, CD, DC, DD) x (log p_cooperate, log p_defect)
_PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class PoolConfig:
    learner_fraction: float = 0.5
    ablation: Ablation = "none"
    n_learners: int = 2

    def __post_init__(self):
        if not 0.0 <= self.learner_fraction <= 1.0:
            raise ConfigError(f"learner_fraction must lie in [0,1]: {self.learner_fraction}")
        if self.ablation not in ("none", "opponent_id", "no_tabular"):
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.ablation == "no_tabular" and self.n_learners < 2:
            raise ConfigError("no_tabular ablation needs at least two learners")
        if self.n_learners < 1:
            raise ConfigError("need at least one learner")

    @property
    def cond_dim(self) -> int:
        return COND_DIM if self.ablation == "opponent_id" else 0


@dataclass(frozen=True)
class Matchup:
    """One scheduled episode for a focal learner."""

    opponent_kind: Literal["learner", "tabular"]
    opponent_learner: int | None = None
    opponent_policy: TabularPolicy | None = None


def sample_matchup(cfg: PoolConfig, learners: list[int], focal: int, rng: np.random.Generator) -> Matchup:
    """Draw one opponent for the focal learner.

    With probability learner_fraction (always, under no_tabular) the opponent
    is another learner chosen uniformly among the rest; otherwise a fresh
    uniform tabular policy.
    """
    if not learners:
        raise ConfigError("sample_matchup requires at least one learner")
    vs_learner = cfg.ablation == "no_tabular" or rng.random() < cfg.learner_fraction
    if vs_learner:
        others = [i for i in learners if i != focal]
        if not others:
            raise ConfigError("learner-vs-learner matchup drawn but no peer exists")
        return Matchup("learner", opponent_learner=others[int(rng.integers(len(others)))])
    return Matchup("tabular", opponent_policy=sample_uniform(rng))


def conditioning_vector(opponent: TabularPolicy | None) -> np.ndarray:
    """Flattened log-probability identity vector; zeros for learner opponents.

    Order is (Start, CC, CD, DC, DD) x (cooperate, defect); probabilities are
    clamped to [1e-6, 1-1e-6] before the log so deterministic policies stay
    finite.
    """
    if opponent is None:
        return np.zeros(COND_DIM, dtype=np.float64)
    p = np.clip(opponent.coop_probs(), _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    z = np.empty(COND_DIM, dtype=np.float64)
    z[0::2] = np.log(p)
    z[1::2] = np.log(1.0 - p)
    return z


def inject_conditioning(inputs: ModelInputs, z: np.ndarray | None) -> ModelInputs:
    """Attach the conditioning vector as a pseudo-step before the first
    observation; with z None the stream is returned unchanged."""
    if z is None:
        return inputs
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = np.broadcast_to(z, (inputs.batch, z.shape[0]))
    return ModelInputs(
        obs=inputs.obs,
        prev_action=inputs.prev_action,
        prev_reward=inputs.prev_reward,
        prev_reward_mask=inputs.prev_reward_mask,
        cond=z,
    )


def no_tabular_pretrain_source(
    n: int, cfg: EpisodeConfig, rng: np.random.Generator
) -> TrajectoryDataset:
    """Pretraining source for the no-tabular ablation: both agents act
    uniformly at random each round; rewards and observations from the game."""
    from .engine import RandomBatchController, play_batch

    ds = TrajectoryDataset(horizon=cfg.horizon)
    chunk = 4096
    done = 0
    while done < n:
        b = min(chunk, n - done)
        c1 = RandomBatchController(b, rng)
        c2 = RandomBatchController(b, rng)
        side1, side2 = play_batch(c1, c2, b, cfg)
        ds.add_batch(*side1, phase=0, agent_index=0)
        ds.add_batch(*side2, phase=0, agent_index=1)
        done += b
    return ds
