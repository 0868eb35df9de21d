"""Vectorized lockstep episode runner.

A controller plays a batch of episodes from one perspective: it consumes the
current observation for every episode, returns a batch of actions, then is
told the batch of rewards those actions earned. All randomness comes from
generators handed to the controllers, consumed in a fixed order, so a run is
reproducible bit-exactly from its seed.
"""

from __future__ import annotations

import numpy as np

from .game import EpisodeConfig, N_ACTIONS
from .model import ModelParams, gru_step, heads, softmax

BatchSide = tuple[np.ndarray, np.ndarray, np.ndarray]  # obs, actions, rewards; each (B, T)


class TabularBatchController:
    """One memory-1 policy per episode, applied in parallel."""

    def __init__(self, coop_probs: np.ndarray, rng: np.random.Generator):
        self.coop_probs = np.asarray(coop_probs, dtype=np.float64)
        self.rng = rng

    def act(self, obs: np.ndarray) -> np.ndarray:
        p = self.coop_probs[np.arange(obs.shape[0]), obs]
        return (self.rng.random(obs.shape[0]) >= p).astype(np.int64)

    def observe_reward(self, rewards: np.ndarray) -> None:
        pass


class RandomBatchController:
    """Uniformly random actions every round."""

    def __init__(self, batch: int, rng: np.random.Generator):
        self.batch = batch
        self.rng = rng

    def act(self, obs: np.ndarray) -> np.ndarray:
        return self.rng.integers(0, N_ACTIONS, size=obs.shape[0], dtype=np.int64)

    def observe_reward(self, rewards: np.ndarray) -> None:
        pass


class ModelStateController:
    """Shared recurrent-state bookkeeping for sequence-model controllers.

    Maintains, per episode, the GRU state plus the lagged input modalities:
    at round t the model consumes (o_t, a_{t-1}, reward received with o_{t-1}).
    An optional conditioning vector is consumed as one extra step up front.
    """

    def __init__(
        self,
        params: ModelParams,
        batch: int,
        rng: np.random.Generator,
        include_actions: bool = True,
        include_rewards: bool = True,
        cond: np.ndarray | None = None,
    ):
        self.params = params
        self.batch = batch
        self.rng = rng
        self.include_actions = include_actions
        self.include_rewards = include_rewards
        hdim = params["gru_wh_n"].shape[0]
        self.h = np.zeros((batch, hdim), dtype=np.float64)
        if cond is not None:
            cond = np.asarray(cond, dtype=np.float64)
            if cond.ndim == 1:
                cond = np.broadcast_to(cond, (batch, cond.shape[0]))
            self.h = gru_step(params, self.h, cond @ params["cond_embed"])
        self.round = 0
        self._prev_action = np.full(batch, -1, dtype=np.int64)
        self._lag_reward = np.zeros(batch, dtype=np.float64)
        self._lag_mask = 0.0
        self._held_reward = np.zeros(batch, dtype=np.float64)
        self._held_mask = 0.0

    def _consume(self, obs: np.ndarray) -> None:
        p = self.params
        x = p["obs_embed"][obs].copy()
        if self.include_actions and self.round > 0:
            x += p["action_embed"][self._prev_action]
        if self.include_rewards and self._lag_mask:
            x += self._lag_reward[:, None] * p["reward_embed"][0]
        self.h = gru_step(p, self.h, x)

    def _advance(self, actions: np.ndarray) -> None:
        self._prev_action = actions
        self._lag_reward = self._held_reward
        self._lag_mask = self._held_mask
        self.round += 1

    def observe_reward(self, rewards: np.ndarray) -> None:
        self._held_reward = np.asarray(rewards, dtype=np.float64)
        self._held_mask = 1.0

    @property
    def held_reward(self) -> tuple[np.ndarray, float]:
        """Reward revealed with the current observation (and its presence)."""
        return self._held_reward, self._held_mask


class PriorActionController(ModelStateController):
    """Acts by sampling the model's action head directly (A2C deployment,
    frozen model-free opponents). Optionally records log-probs and values."""

    def __init__(self, *args, record: bool = False, **kwargs):
        super().__init__(*args, **kwargs)
        self.record = record
        self.log_probs: list[np.ndarray] = []
        self.values: list[np.ndarray] = []
        self.entropies: list[np.ndarray] = []

    def act(self, obs: np.ndarray) -> np.ndarray:
        self._consume(obs)
        out = heads(self.params, self.h)
        probs = softmax(out.action_logits)
        actions = (self.rng.random(self.batch) >= probs[:, 0]).astype(np.int64)
        if self.record:
            chosen = probs[np.arange(self.batch), actions]
            self.log_probs.append(np.log(np.maximum(chosen, 1e-300)))
            self.values.append(out.value)
            with np.errstate(divide="ignore", invalid="ignore"):
                plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
            self.entropies.append(-plogp.sum(axis=1))
        self._advance(actions)
        return actions


def play_batch(
    controller1, controller2, n_episodes: int, cfg: EpisodeConfig
) -> tuple[BatchSide, BatchSide]:
    """Run n episodes in lockstep; returns both perspectives as dense arrays."""
    t_max = cfg.horizon
    table = cfg.payoff.table()
    obs1 = np.zeros((n_episodes, t_max), dtype=np.int64)
    obs2 = np.zeros((n_episodes, t_max), dtype=np.int64)
    act1 = np.zeros((n_episodes, t_max), dtype=np.int64)
    act2 = np.zeros((n_episodes, t_max), dtype=np.int64)
    rew1 = np.zeros((n_episodes, t_max), dtype=np.float64)
    rew2 = np.zeros((n_episodes, t_max), dtype=np.float64)
    o1 = np.zeros(n_episodes, dtype=np.int64)
    o2 = np.zeros(n_episodes, dtype=np.int64)
    for t in range(t_max):
        a1 = controller1.act(o1)
        a2 = controller2.act(o2)
        r1 = table[a1, a2]
        r2 = table[a2, a1]
        obs1[:, t], obs2[:, t] = o1, o2
        act1[:, t], act2[:, t] = a1, a2
        rew1[:, t], rew2[:, t] = r1, r2
        controller1.observe_reward(r1)
        controller2.observe_reward(r2)
        o1 = 1 + 2 * a1 + a2
        o2 = 1 + 2 * a2 + a1
    return (obs1, act1, rew1), (obs2, act2, rew2)
