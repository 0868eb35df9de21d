"""Independent advantage actor-critic over interaction histories.

The policy network consumes the observation sequence only (past actions are
recoverable from observations in this game) and shares the GRU trunk with a
linear value head. Training follows the usual recipe: reward rescaling,
GAE advantages, TD(lambda) value targets, optional advantage normalization,
entropy regularization, one clipped Adam step per collected batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .engine import PriorActionController, play_batch
from .errors import ContractViolationError
from .game import EpisodeConfig
from .model import (
    ModelParams,
    backward_sequence,
    check_finite_loss,
    encode_sequences,
    forward_sequence,
    heads_from_cache,
    softmax,
)
from .optim import OptimizerConfig, OptState, adamw_step, clip_by_global_norm


@dataclass(frozen=True)
class A2CHyper:
    batch_size: int = 2048
    reward_rescaling: float = 0.2
    gamma: float = 0.99
    td_lambda: float = 0.99
    gae_lambda: float = 0.99
    value_coefficient: float = 0.5
    entropy_reg: float = 0.001
    learning_rate: float = 0.005
    adam_epsilon: float = 1e-5
    max_grad_norm: float = 1.0
    advantages_normalization: bool = True
    # Anneal the entropy coefficient from entropy_reg_initial down to
    # entropy_reg over the first entropy_anneal_iterations updates; 0 keeps
    # the coefficient constant (the paper-scale setting).
    entropy_reg_initial: float | None = None
    entropy_anneal_iterations: int = 0

    def __post_init__(self):
        for name in ("gamma", "td_lambda", "gae_lambda"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractViolationError(f"{name} must lie in [0,1], got {v}")
        if self.batch_size < 1:
            raise ContractViolationError("batch_size must be >= 1")

    def entropy_at(self, iteration: int) -> float:
        """Current entropy coefficient for a 1-based update iteration."""
        if not self.entropy_anneal_iterations or self.entropy_reg_initial is None:
            return self.entropy_reg
        frac = min(1.0, max(iteration - 1, 0) / self.entropy_anneal_iterations)
        return self.entropy_reg_initial + (self.entropy_reg - self.entropy_reg_initial) * frac

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            weight_decay=0.0,
            beta1=0.9,
            beta2=0.999,
            epsilon=self.adam_epsilon,
            max_grad_norm=self.max_grad_norm,
        )


# Table-matched per-experiment defaults (Step 1..4 columns).
A2C_STEP_HYPERS = {
    "step1": A2CHyper(
        batch_size=2048, reward_rescaling=0.2, td_lambda=0.99, gae_lambda=0.99,
        entropy_reg=0.001, learning_rate=0.005, advantages_normalization=True,
    ),
    "step2": A2CHyper(
        batch_size=2048, reward_rescaling=0.05, td_lambda=1.0, gae_lambda=1.0,
        entropy_reg=0.001, learning_rate=0.005, advantages_normalization=False,
    ),
    "step3": A2CHyper(
        batch_size=4096, reward_rescaling=0.02, td_lambda=0.95, gae_lambda=0.95,
        entropy_reg=0.001, learning_rate=0.0005, advantages_normalization=True,
    ),
    "step4": A2CHyper(
        batch_size=4096, reward_rescaling=0.02, td_lambda=1.0, gae_lambda=1.0,
        entropy_reg=0.01, learning_rate=0.001, advantages_normalization=True,
    ),
}


@dataclass
class A2CBatch:
    """Complete trajectories plus the policy outputs that produced them."""

    obs: np.ndarray  # (B, T) int64
    actions: np.ndarray  # (B, T) int64
    rewards: np.ndarray  # (B, T) float64, raw (unscaled)
    log_probs: np.ndarray  # (B, T) float64
    values: np.ndarray  # (B, T) float64
    cond: np.ndarray | None = None  # (B, 10) under the opponent-id ablation


def policy_value(
    params: ModelParams, observations: np.ndarray, cond: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    """Action distribution and value after consuming an observation prefix."""
    obs = np.asarray(observations, dtype=np.int64).reshape(1, -1)
    dummy = np.zeros_like(obs)
    inputs = encode_sequences(
        obs, dummy, dummy.astype(np.float64), include_actions=False, include_rewards=False,
        cond=None if cond is None else np.asarray(cond, dtype=np.float64).reshape(1, -1),
    )
    cache = forward_sequence(params, inputs)
    out = heads_from_cache(params, cache)
    return softmax(out.action_logits[0, -1]), float(out.value[0, -1])


def compute_advantages(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap_value: np.ndarray | float,
    h: A2CHyper,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE advantages and TD(lambda) value targets for (B, T) batches.

    Rewards are multiplied by the reward_rescaling factor first; the terminal
    bootstrap is 0 for the finite-horizon game. Normalized advantages are
    standardized across the whole batch with a 1e-8 divisor guard.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ContractViolationError(
            f"rewards {rewards.shape} and values {values.shape} must match"
        )
    if rewards.ndim == 1:
        adv, tgt = compute_advantages(rewards[None], values[None], bootstrap_value, h)
        return adv[0], tgt[0]
    b, t = rewards.shape
    scaled = rewards * h.reward_rescaling
    boot = np.broadcast_to(np.asarray(bootstrap_value, dtype=np.float64), (b,))
    v_next = np.concatenate([values[:, 1:], boot[:, None]], axis=1)
    deltas = scaled + h.gamma * v_next - values
    advantages = np.zeros_like(deltas)
    td_acc = np.zeros_like(deltas)
    acc_a = np.zeros(b)
    acc_t = np.zeros(b)
    for k in range(t - 1, -1, -1):
        acc_a = deltas[:, k] + h.gamma * h.gae_lambda * acc_a
        acc_t = deltas[:, k] + h.gamma * h.td_lambda * acc_t
        advantages[:, k] = acc_a
        td_acc[:, k] = acc_t
    value_targets = values + td_acc
    if h.advantages_normalization:
        mu = advantages.mean()
        sd = advantages.std()
        advantages = (advantages - mu) / (sd + 1e-8)
    return advantages, value_targets


def _policy_head_grads(
    probs: np.ndarray, actions: np.ndarray, advantages: np.ndarray, h: A2CHyper, scale: float
) -> tuple[np.ndarray, float, float]:
    """d(loss)/d(action_logits) for the policy and entropy terms, plus the
    corresponding loss contributions (policy term, entropy term)."""
    b, t, _ = probs.shape
    onehot = np.zeros_like(probs)
    rows = np.repeat(np.arange(b), t)
    cols = np.tile(np.arange(t), b)
    onehot[rows, cols, actions.reshape(-1)] = 1.0
    chosen = np.maximum((probs * onehot).sum(axis=2), 1e-300)
    pol_loss = float(-(np.log(chosen) * advantages).sum()) * scale
    d_logits = (probs - onehot) * advantages[..., None] * scale

    logp = np.log(np.maximum(probs, 1e-300))
    neg_entropy = (probs * logp).sum(axis=2)
    ent_loss = float(h.entropy_reg * neg_entropy.sum()) * scale
    d_logits += h.entropy_reg * probs * (logp - neg_entropy[..., None]) * scale
    return d_logits, pol_loss, ent_loss


def a2c_loss(
    params: ModelParams,
    batch: A2CBatch,
    advantages: np.ndarray,
    value_targets: np.ndarray,
    h: A2CHyper,
) -> float:
    """Combined policy-gradient / value / entropy loss, averaged over the batch."""
    loss, _, _ = a2c_loss_and_grads(params, batch, advantages, value_targets, h)
    return loss


def a2c_loss_and_grads(
    params: ModelParams,
    batch: A2CBatch,
    advantages: np.ndarray,
    value_targets: np.ndarray,
    h: A2CHyper,
):
    """Loss, exact gradients, and per-term breakdown for one update."""
    b, t = batch.obs.shape
    if advantages.shape != (b, t) or value_targets.shape != (b, t):
        raise ContractViolationError("advantage/value-target shapes must match the batch")
    inputs = encode_sequences(
        batch.obs, batch.actions, batch.rewards,
        include_actions=False, include_rewards=False, cond=batch.cond,
    )
    cache = forward_sequence(params, inputs)
    out = heads_from_cache(params, cache)
    offset = 0 if batch.cond is None else 1
    probs = softmax(out.action_logits[:, offset:])
    values = out.value[:, offset:]
    scale = 1.0 / b

    d_logits, pol_loss, ent_loss = _policy_head_grads(probs, batch.actions, advantages, h, scale)
    v_err = values - value_targets
    val_loss = float(h.value_coefficient * (v_err**2).sum()) * scale
    d_value = 2.0 * h.value_coefficient * v_err * scale

    loss = check_finite_loss(pol_loss + val_loss + ent_loss)
    if offset:
        d_logits = np.concatenate([np.zeros((b, 1, 2)), d_logits], axis=1)
        d_value = np.concatenate([np.zeros((b, 1)), d_value], axis=1)
    grads = backward_sequence(params, cache, d_action_logits=d_logits, d_value=d_value)
    logp = np.log(np.maximum(probs, 1e-300))
    breakdown = {
        "policy_loss": pol_loss,
        "value_loss": val_loss,
        "entropy_loss": ent_loss,
        "entropy": float(-(probs * logp).sum(axis=2).mean()),
    }
    return loss, grads, breakdown


def collect_a2c_batch(
    params: ModelParams,
    opponent_factory: Callable[[int, np.random.Generator], object],
    n_episodes: int,
    episode_cfg: EpisodeConfig,
    rng: np.random.Generator,
    cond: np.ndarray | None = None,
) -> A2CBatch:
    """Play n episodes against one opponent group with the current policy."""
    me = PriorActionController(params, n_episodes, rng, include_actions=False,
                              include_rewards=False, cond=cond, record=True)
    opponent = opponent_factory(n_episodes, rng)
    (obs, act, rew), _ = play_batch(me, opponent, n_episodes, episode_cfg)
    return A2CBatch(
        obs=obs, actions=act, rewards=rew,
        log_probs=np.stack(me.log_probs, axis=1),
        values=np.stack(me.values, axis=1),
        cond=None if cond is None else np.array(cond, dtype=np.float64),
    )


def a2c_update(
    params: ModelParams,
    opt: OptState,
    batch: A2CBatch,
    h: A2CHyper,
    iteration: int = 1,
) -> tuple[ModelParams, OptState, dict[str, float]]:
    """One clipped Adam step on the combined loss; emits episode metrics."""
    if h.entropy_at(iteration) != h.entropy_reg:
        h = replace(h, entropy_reg=h.entropy_at(iteration))
    advantages, value_targets = compute_advantages(batch.rewards, batch.values, 0.0, h)
    loss, grads, breakdown = a2c_loss_and_grads(params, batch, advantages, value_targets, h)
    grads, grad_norm = clip_by_global_norm(grads, h.max_grad_norm)
    if h.learning_rate == 0.0:
        new_params, new_opt = params, opt  # a zero step, exactly
    else:
        new_params, new_opt = adamw_step(params, grads, opt, h.optimizer_config())
    metrics = {
        "loss": loss,
        "grad_norm": grad_norm,
        "return_mean": float(batch.rewards.sum(axis=1).mean()),
        "coop_rate": float((batch.actions == 0).mean()),
        **breakdown,
    }
    return new_params, new_opt, metrics


def a2c_train_iteration(
    params: ModelParams,
    opt: OptState,
    pool_sampler: Callable[[int, np.random.Generator], list],
    h: A2CHyper,
    episode_cfg: EpisodeConfig,
    rng: np.random.Generator,
) -> tuple[ModelParams, OptState, dict[str, float]]:
    """Sample a batch through the population scheduler and take one step.

    ``pool_sampler(n, rng)`` returns groups of (count, opponent_factory, cond).
    """
    groups = pool_sampler(h.batch_size, rng)
    batches = []
    for count, opponent_factory, cond in groups:
        if count == 0:
            continue
        batches.append(
            collect_a2c_batch(params, opponent_factory, count, episode_cfg, rng, cond=cond)
        )
    merged = _merge_batches(batches)
    return a2c_update(params, opt, merged, h)


def _merge_batches(batches: list[A2CBatch]) -> A2CBatch:
    if not batches:
        raise ContractViolationError("no episodes collected")
    if len(batches) == 1:
        return batches[0]
    conds = [b.cond for b in batches]
    if any(c is None for c in conds) and any(c is not None for c in conds):
        raise ContractViolationError("cannot mix conditioned and unconditioned batches")
    return A2CBatch(
        obs=np.concatenate([b.obs for b in batches]),
        actions=np.concatenate([b.actions for b in batches]),
        rewards=np.concatenate([b.rewards for b in batches]),
        log_probs=np.concatenate([b.log_probs for b in batches]),
        values=np.concatenate([b.values for b in batches]),
        cond=None if conds[0] is None else np.concatenate(conds),
    )
