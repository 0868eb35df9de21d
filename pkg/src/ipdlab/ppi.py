"""Predictive policy improvement.

The loop: fit a sequence model to all accumulated trajectories by
next-token prediction, deploy the Boltzmann-reweighted policy

    pi(a|x) propto p(a|x) * exp(beta * Q_hat(x, a)),

where Q_hat comes from Monte-Carlo rollouts inside the model itself, collect
fresh episodes with it, grow the dataset, repeat with re-initialized weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import TrajectoryDataset
from .engine import ModelStateController, TabularBatchController, play_batch
from .errors import ContractViolationError
from .game import EpisodeConfig, Step
from .model import (
    ModelArch,
    ModelInputs,
    ModelParams,
    backward_sequence,
    check_finite_loss,
    encode_sequences,
    forward_sequence,
    gru_step,
    heads_from_cache,
    init_params,
    softmax,
    swish,
)
from .optim import OptimizerConfig, OptState, adamw_step, clip_by_global_norm
from .tabular import sample_uniform


@dataclass(frozen=True)
class PpiConfig:
    n_phases: int = 30
    n_samples_per_phase: int = 20_000
    n_pretrain_trajectories: int = 200_000
    train_epochs: int = 10
    train_batch_size: int = 256
    beta: float = 0.01
    rollout_depth: int = 15
    n_rollouts_per_action: int = 16
    rollout_gamma: float = 0.99
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)  # obs, action, reward
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    rollout_reward_noise_std: float = 0.0
    store_opponent_perspective: bool = False
    collect_chunk: int = 512

    def __post_init__(self):
        if self.beta < 0:
            raise ContractViolationError("beta must be >= 0")
        if self.rollout_depth < 1:
            raise ContractViolationError("rollout_depth must be >= 1")
        if any(w < 0 for w in self.loss_weights):
            raise ContractViolationError("loss weights must be >= 0")


def build_pretrain_dataset(
    n: int,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
    cond_dim: int = 0,
) -> TrajectoryDataset:
    """n episodes between freshly sampled uniform tabular policies; both
    perspectives stored (with the opponent's identity vector when the
    dataset carries a conditioning channel)."""
    from .population import conditioning_vector

    if n < 1:
        raise ContractViolationError("need at least one pretraining episode")
    ds = TrajectoryDataset(horizon=cfg.horizon, cond_dim=cond_dim)
    chunk = 4096
    done = 0
    while done < n:
        b = min(chunk, n - done)
        pol1 = [sample_uniform(rng) for _ in range(b)]
        pol2 = [sample_uniform(rng) for _ in range(b)]
        c1 = TabularBatchController(np.stack([p.coop_probs() for p in pol1]), rng)
        c2 = TabularBatchController(np.stack([p.coop_probs() for p in pol2]), rng)
        side1, side2 = play_batch(c1, c2, b, cfg)
        if cond_dim:
            z1 = np.stack([conditioning_vector(p) for p in pol2])
            z2 = np.stack([conditioning_vector(p) for p in pol1])
        else:
            z1 = z2 = None
        ds.add_batch(*side1, phase=0, agent_index=0, cond=z1)
        ds.add_batch(*side2, phase=0, agent_index=1, cond=z2)
        done += b
    return ds


def _derive_final_next_obs(
    actions: np.ndarray, rewards: np.ndarray, cfg: EpisodeConfig
) -> np.ndarray:
    """Observation that would follow the last round, recovered from the last
    own action and its payoff (payoffs distinguish the co-player's action)."""
    table = cfg.payoff.table()
    a = actions[:, -1]
    r = rewards[:, -1]
    r_if_coop = table[a, 0]
    other = (np.abs(r - r_if_coop) > np.abs(r - table[a, 1])).astype(np.int64)
    return 1 + 2 * a + other


def sequence_loss_and_grads(
    params: ModelParams,
    obs: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    weights: tuple[float, float, float],
    cfg: EpisodeConfig,
    cond: np.ndarray | None = None,
    batch_index: int | None = None,
):
    """Next-token loss over a batch of stored trajectories, with gradients.

    Per position t the heads are scored against: the action taken at t, the
    next observation, and the payoff revealed by the current observation
    (absent at t=0). Components are means over their present (record, step)
    cells, combined with the configured weights.
    """
    w_obs, w_act, w_rew = weights
    b, t_len = obs.shape
    inputs = encode_sequences(obs, actions, rewards, cond=cond)
    cache = forward_sequence(params, inputs)
    out = heads_from_cache(params, cache)
    offset = 0 if cond is None else 1

    obs_logits = out.obs_logits[:, offset:]
    act_logits = out.action_logits[:, offset:]
    reward_mean = out.reward_mean[:, offset:]

    obs_targets = np.concatenate(
        [obs[:, 1:], _derive_final_next_obs(actions, rewards, cfg)[:, None]], axis=1
    )
    rows = np.repeat(np.arange(b), t_len)
    cols = np.tile(np.arange(t_len), b)

    p_obs = softmax(obs_logits)
    n_cells = b * t_len
    loss_obs = -float(
        np.log(np.maximum(p_obs[rows, cols, obs_targets.reshape(-1)], 1e-300)).sum()
    ) / n_cells
    d_obs = p_obs.copy()
    d_obs[rows, cols, obs_targets.reshape(-1)] -= 1.0
    d_obs *= w_obs / n_cells

    p_act = softmax(act_logits)
    loss_act = -float(
        np.log(np.maximum(p_act[rows, cols, actions.reshape(-1)], 1e-300)).sum()
    ) / n_cells
    d_act = p_act.copy()
    d_act[rows, cols, actions.reshape(-1)] -= 1.0
    d_act *= w_act / n_cells

    # Reward revealed by o_t is the payoff earned at t-1; no target at t=0.
    rew_targets = rewards[:, :-1]
    rew_pred = reward_mean[:, 1:]
    n_rew = max(b * (t_len - 1), 1)
    err = rew_pred - rew_targets
    loss_rew = float((err**2).sum()) / n_rew
    d_rew = np.zeros_like(reward_mean)
    d_rew[:, 1:] = 2.0 * err * (w_rew / n_rew)

    loss = check_finite_loss(
        w_obs * loss_obs + w_act * loss_act + w_rew * loss_rew, step_index=batch_index
    )
    if offset:
        pad2 = lambda a: np.concatenate([np.zeros((b, 1) + a.shape[2:]), a], axis=1)
        d_obs, d_act, d_rew = pad2(d_obs), pad2(d_act), pad2(d_rew)
    grads = backward_sequence(
        params, cache, d_obs_logits=d_obs, d_action_logits=d_act, d_reward_mean=d_rew
    )
    parts = {"obs": loss_obs, "action": loss_act, "reward": loss_rew}
    return loss, grads, parts


def sequence_loss(
    params: ModelParams,
    obs: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    weights: tuple[float, float, float],
    cfg: EpisodeConfig,
    cond: np.ndarray | None = None,
) -> float:
    return sequence_loss_and_grads(params, obs, actions, rewards, weights, cfg, cond)[0]


def train_sequence_model(
    dataset: TrajectoryDataset,
    arch: ModelArch,
    cfg: PpiConfig,
    episode_cfg: EpisodeConfig,
    rng: np.random.Generator,
) -> tuple[ModelParams, list[float]]:
    """Fresh initialization, then train_epochs passes over the shuffled
    dataset with AdamW and global-norm clipping. Returns the final
    parameters and the per-epoch mean loss curve."""
    if len(dataset) == 0:
        raise ContractViolationError("cannot train on an empty dataset")
    obs, actions, rewards, cond = dataset.as_arrays()
    params = init_params(arch, rng)
    opt = OptState.init(params)
    n = obs.shape[0]
    curve: list[float] = []
    for _ in range(cfg.train_epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.train_batch_size):
            idx = order[start : start + cfg.train_batch_size]
            loss, grads, _ = sequence_loss_and_grads(
                params,
                obs[idx],
                actions[idx],
                rewards[idx],
                cfg.loss_weights,
                episode_cfg,
                cond=None if cond is None else cond[idx],
                batch_index=start // cfg.train_batch_size,
            )
            grads, _ = clip_by_global_norm(grads, cfg.optimizer.max_grad_norm)
            params, opt = adamw_step(params, grads, opt, cfg.optimizer)
            epoch_losses.append(loss)
        curve.append(float(np.mean(epoch_losses)))
    return params, curve


def rollout_q(
    params: ModelParams,
    h: np.ndarray,
    candidates: np.ndarray,
    prev_reward: np.ndarray,
    prev_reward_mask: float,
    depth: int,
    cfg: PpiConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Monte-Carlo value estimates from autoregressive rollouts in the model.

    From each of B hidden states, every candidate first action is rolled out
    n_rollouts_per_action times: sample the next observation (restricted to
    outcomes consistent with the action just taken), consume it, read the
    predicted payoff it reveals, then sample the next own action from the
    action head. The same uniform draws are shared across candidates
    (common random numbers), so Q differences between actions are driven by
    the model's predictions rather than by sampling noise. Returns (B, C)
    mean discounted sums over the rollouts.
    """
    b = h.shape[0]
    c = len(candidates)
    r = cfg.n_rollouts_per_action
    m = b * c * r

    def draw():
        # (B, 1, R) broadcast over candidates, then flattened to lane order.
        return np.broadcast_to(rng.random((b, 1, r)), (b, c, r)).reshape(m)

    h = np.repeat(h, c * r, axis=0)
    a_cur = np.tile(np.repeat(np.asarray(candidates, dtype=np.int64), r), b)
    prev_r = np.repeat(np.asarray(prev_reward, dtype=np.float64), c * r)
    prev_mask = prev_reward_mask
    q = np.zeros(m, dtype=np.float64)
    discount = 1.0
    rows = np.arange(m)
    s = swish(h)
    for j in range(depth):
        obs_probs = softmax(s @ params["head_obs_w"] + params["head_obs_b"])
        idx0 = 1 + 2 * a_cur
        p_coop = obs_probs[rows, idx0]
        p_def = obs_probs[rows, idx0 + 1]
        total = p_coop + p_def
        frac = np.where(total > 1e-12, p_coop / np.maximum(total, 1e-300), 0.5)
        other = (draw() >= frac).astype(np.int64)
        o_next = idx0 + other

        x = params["obs_embed"][o_next] + params["action_embed"][a_cur]
        if prev_mask:
            x = x + prev_r[:, None] * params["reward_embed"][0]
        h = gru_step(params, h, x)
        s = swish(h)
        r_hat = (s @ params["head_reward_w"])[:, 0] + params["head_reward_b"][0]
        if cfg.rollout_reward_noise_std > 0.0:
            noise = np.broadcast_to(
                rng.standard_normal((b, 1, r)), (b, c, r)
            ).reshape(m)
            r_hat = r_hat + cfg.rollout_reward_noise_std * noise
        q += discount * r_hat
        discount *= cfg.rollout_gamma
        if j < depth - 1:
            act_probs = softmax(s @ params["head_action_w"] + params["head_action_b"])
            a_cur = (draw() >= act_probs[:, 0]).astype(np.int64)
            prev_r = r_hat
            prev_mask = 1.0
    return q.reshape(b, c, r).mean(axis=2)


def improved_distribution(prior: np.ndarray, q: np.ndarray, beta: float) -> np.ndarray:
    """Boltzmann reweighting of the prior by Q estimates; rows sum to one.

    beta == 0 returns the prior untouched; zero prior mass stays zero.
    """
    if beta == 0.0:
        return prior
    shift = q - q.max(axis=-1, keepdims=True)
    w = prior * np.exp(beta * shift)
    return w / w.sum(axis=-1, keepdims=True)


def _history_state(
    params: ModelParams,
    steps: Sequence[Step],
    current_obs: int,
    cond: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """GRU state after consuming a history prefix plus the current
    observation; also the reward revealed alongside it (for rollouts)."""
    t = len(steps)
    n_pos = t + 1
    obs_seq = np.array([[s.obs for s in steps] + [int(current_obs)]], dtype=np.int64)
    prev_action = np.full((1, n_pos), -1, dtype=np.int64)
    prev_reward = np.zeros((1, n_pos), dtype=np.float64)
    mask = np.zeros((1, n_pos), dtype=np.float64)
    for j in range(1, n_pos):
        prev_action[0, j] = steps[j - 1].action
        if j >= 2:
            prev_reward[0, j] = steps[j - 2].reward
            mask[0, j] = 1.0
    if cond is not None:
        cond = np.asarray(cond, dtype=np.float64).reshape(1, -1)
    inputs = ModelInputs(obs_seq, prev_action, prev_reward, mask, cond=cond)
    cache = forward_sequence(params, inputs)
    h = cache.h[-1]
    held = np.array([steps[-1].reward]) if steps else np.zeros(1)
    return h, held, 1.0 if steps else 0.0


def estimate_q(
    params: ModelParams,
    steps: Sequence[Step],
    current_obs: int,
    candidate: int,
    cfg: PpiConfig,
    episode_cfg: EpisodeConfig,
    rng: np.random.Generator,
    cond: np.ndarray | None = None,
) -> float:
    """Mean rollout return of taking ``candidate`` at the current history."""
    h, held, mask = _history_state(params, steps, current_obs, cond)
    depth = min(cfg.rollout_depth, episode_cfg.horizon - len(steps))
    q = rollout_q(params, h, np.array([candidate]), held, mask, depth, cfg, rng)
    return float(q[0, 0])


def improved_policy(
    params: ModelParams,
    steps: Sequence[Step],
    current_obs: int,
    cfg: PpiConfig,
    episode_cfg: EpisodeConfig,
    rng: np.random.Generator,
    cond: np.ndarray | None = None,
) -> np.ndarray:
    """The deployed action distribution at one history (single-history path)."""
    h, held, mask = _history_state(params, steps, current_obs, cond)
    s = swish(h)
    prior = softmax(s @ params["head_action_w"] + params["head_action_b"])[0]
    q = np.array(
        [
            estimate_q(params, steps, current_obs, a, cfg, episode_cfg, rng, cond)
            for a in (0, 1)
        ]
    )
    return improved_distribution(prior, q, cfg.beta)


class PpiController(ModelStateController):
    """Batched deployment of the improved policy, with optional on-path
    diagnostics (KL to the prior and Q-spread over supported actions)."""

    def __init__(
        self,
        params: ModelParams,
        batch: int,
        rng: np.random.Generator,
        cfg: PpiConfig,
        episode_cfg: EpisodeConfig,
        cond: np.ndarray | None = None,
        record_stats: bool = False,
        support_threshold: float = 0.05,
    ):
        super().__init__(params, batch, rng, cond=cond)
        self.cfg = cfg
        self.episode_cfg = episode_cfg
        self.record_stats = record_stats
        self.support_threshold = support_threshold
        self.kl_steps: list[np.ndarray] = []
        self.q_spread_steps: list[np.ndarray] = []

    def act(self, obs: np.ndarray) -> np.ndarray:
        self._consume(obs)
        p = self.params
        s = swish(self.h)
        prior = softmax(s @ p["head_action_w"] + p["head_action_b"])

        cfg = self.cfg
        depth = min(cfg.rollout_depth, self.episode_cfg.horizon - self.round)
        held, held_mask = self.held_reward
        q = rollout_q(
            p, self.h, np.arange(2), held, held_mask, depth, cfg, self.rng
        )

        pi = improved_distribution(prior, q, cfg.beta)
        actions = (self.rng.random(self.batch) >= pi[:, 0]).astype(np.int64)
        if self.record_stats:
            safe_ratio = np.where(pi > 0, pi / np.maximum(prior, 1e-300), 1.0)
            kl = np.where(pi > 0, pi * np.log(safe_ratio), 0.0).sum(axis=1)
            support = pi > self.support_threshold
            spread = np.where(support.all(axis=1), np.abs(q[:, 0] - q[:, 1]), 0.0)
            self.kl_steps.append(kl)
            self.q_spread_steps.append(spread)
        self._advance(actions)
        return actions

    def stats(self) -> tuple[float, float]:
        """(mean per-step KL to the prior, mean Q-spread over support)."""
        if not self.kl_steps:
            return 0.0, 0.0
        return (
            float(np.mean(np.stack(self.kl_steps))),
            float(np.mean(np.stack(self.q_spread_steps))),
        )


def replay_diagnostics(
    params: ModelParams,
    obs: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    cfg: PpiConfig,
    episode_cfg: EpisodeConfig,
    rng: np.random.Generator,
    support_threshold: float = 0.05,
    cond: np.ndarray | None = None,
) -> tuple[float, float]:
    """Teacher-forced replay of stored trajectories, recomputing the prior,
    fresh rollout Q-estimates, and the improved policy at every visited step.

    Returns (mean KL(improved || prior) per step, mean Q-spread over actions
    whose improved probability exceeds the support threshold).
    """
    obs = np.asarray(obs, dtype=np.int64)
    b, t_len = obs.shape
    hdim = params["gru_wh_n"].shape[0]
    h = np.zeros((b, hdim), dtype=np.float64)
    if cond is not None:
        h = gru_step(params, h, np.asarray(cond, dtype=np.float64) @ params["cond_embed"])
    kl_sum = 0.0
    spread_sum = 0.0
    for t in range(t_len):
        x = params["obs_embed"][obs[:, t]].copy()
        if t >= 1:
            x += params["action_embed"][actions[:, t - 1]]
        if t >= 2:
            x += rewards[:, t - 2][:, None] * params["reward_embed"][0]
        h = gru_step(params, h, x)
        s = swish(h)
        prior = softmax(s @ params["head_action_w"] + params["head_action_b"])
        depth = min(cfg.rollout_depth, episode_cfg.horizon - t)
        held = rewards[:, t - 1] if t >= 1 else np.zeros(b)
        q = rollout_q(
            params, h, np.arange(2), held, 1.0 if t >= 1 else 0.0, depth, cfg, rng
        )
        pi = improved_distribution(prior, q, cfg.beta)
        ratio = np.where(pi > 0, pi / np.maximum(prior, 1e-300), 1.0)
        kl_sum += float(np.where(pi > 0, pi * np.log(ratio), 0.0).sum(axis=1).mean())
        support = pi > support_threshold
        spread = np.where(support.all(axis=1), np.abs(q[:, 0] - q[:, 1]), 0.0)
        spread_sum += float(spread.mean())
    return kl_sum / t_len, spread_sum / t_len


@dataclass
class PpiLearnerState:
    arch: ModelArch
    dataset: TrajectoryDataset
    params: ModelParams | None = None
    loss_curve: list[float] = field(default_factory=list)


@dataclass
class PhaseStats:
    """Per-learner aggregates for one collection phase."""

    phase: int
    learner: int
    n_ll: int
    n_lt: int
    coop_rate: float
    coop_rate_ll: float | None
    coop_rate_lt: float | None
    return_mean: float
    on_path_kl: float
    q_flatness: float
    seq_loss_final: float
    seq_loss_curve: list[float]
    opp_return_mean: float | None = None  # set when playing a fixed opponent


def _aggregate(groups: list[tuple[np.ndarray, np.ndarray]]) -> tuple[float, float]:
    """(cooperation rate, mean episode return) over (actions, rewards) groups."""
    acts = np.concatenate([g[0] for g in groups])
    rews = np.concatenate([g[1] for g in groups])
    return float((acts == 0).mean()), float(rews.sum(axis=1).mean())


def run_ppi(
    pool_cfg,
    ppi_cfg: PpiConfig,
    arch: ModelArch,
    episode_cfg: EpisodeConfig,
    rng: np.random.Generator,
    n_learners: int = 1,
    fixed_opponent_factory=None,
    pretrain_datasets: list[TrajectoryDataset] | None = None,
    on_phase=None,
) -> tuple[list[PpiLearnerState], list[PhaseStats]]:
    """The full phase loop: (re)train each learner's sequence model on its
    accumulated dataset, deploy the improved policy through the population
    scheduler, grow the datasets, repeat.

    ``fixed_opponent_factory(batch, rng) -> controller`` replaces the pool
    (every episode against that opponent; its perspective is not stored).
    Returns the learner states (final parameters trained on the
    second-to-last dataset, per the phase ordering) and per-phase stats.
    """
    from .population import conditioning_vector

    cond_dim = pool_cfg.cond_dim
    if pretrain_datasets is None:
        pretrain_datasets = [
            build_pretrain_dataset(
                ppi_cfg.n_pretrain_trajectories, episode_cfg, rng, cond_dim=cond_dim
            )
            for _ in range(n_learners)
        ]
    learners = [
        PpiLearnerState(arch=arch, dataset=ds) for ds in pretrain_datasets
    ]
    all_stats: list[PhaseStats] = []

    if ppi_cfg.n_phases == 0:
        for state in learners:
            state.params, state.loss_curve = train_sequence_model(
                state.dataset, arch, ppi_cfg, episode_cfg, rng
            )
        return learners, all_stats

    for phase in range(1, ppi_cfg.n_phases + 1):
        for state in learners:
            state.params, state.loss_curve = train_sequence_model(
                state.dataset, arch, ppi_cfg, episode_cfg, rng
            )
        phase_stats = _collect_phase(
            learners, phase, pool_cfg, ppi_cfg, episode_cfg, rng,
            fixed_opponent_factory, cond_dim, conditioning_vector,
        )
        all_stats.extend(phase_stats)
        if on_phase is not None:
            on_phase(phase, learners, phase_stats)
    return learners, all_stats


def _make_controller(state, batch, rng, ppi_cfg, episode_cfg, cond):
    return PpiController(
        state.params, batch, rng, ppi_cfg, episode_cfg, cond=cond, record_stats=True
    )


def _collect_phase(
    learners, phase, pool_cfg, ppi_cfg, episode_cfg, rng,
    fixed_opponent_factory, cond_dim, conditioning_vector,
):
    n = ppi_cfg.n_samples_per_phase
    chunk = ppi_cfg.collect_chunk
    per_learner: list[dict] = [
        {"ll": [], "lt": [], "kl": [], "spread": []} for _ in learners
    ]

    def run_group(kind, batch, focal, opponent_ctrl_fn, peer=None, store_cond=None):
        ctrl = _make_controller(
            learners[focal], batch, rng, ppi_cfg, episode_cfg,
            cond=store_cond if cond_dim else None,
        )
        opp = opponent_ctrl_fn(batch, rng)
        mine, theirs = play_batch(ctrl, opp, batch, episode_cfg)
        kl, spread = ctrl.stats()
        per_learner[focal][kind].append((mine[1], mine[2]))
        per_learner[focal]["kl"].append(kl)
        per_learner[focal]["spread"].append(spread)
        learners[focal].dataset.add_batch(
            *mine, phase=phase, agent_index=0,
            cond=store_cond if cond_dim else None,
        )
        if peer is not None:
            pk, ps = opp.stats()
            per_learner[peer][kind].append((theirs[1], theirs[2]))
            per_learner[peer]["kl"].append(pk)
            per_learner[peer]["spread"].append(ps)
            peer_cond = np.zeros((batch, cond_dim)) if cond_dim else None
            learners[peer].dataset.add_batch(
                *theirs, phase=phase, agent_index=1, cond=peer_cond,
            )
        elif kind == "lt" and ppi_cfg.store_opponent_perspective:
            learners[focal].dataset.add_batch(
                *theirs, phase=phase, agent_index=1,
                cond=np.zeros((batch, cond_dim)) if cond_dim else None,
            )
        return theirs

    n_ll_list = [0] * len(learners)
    n_lt_list = [0] * len(learners)
    opp_returns: list[np.ndarray] = []
    if fixed_opponent_factory is not None:
        done = 0
        while done < n:
            b = min(chunk, n - done)
            cond = np.zeros((b, cond_dim)) if cond_dim else None
            theirs = run_group("ll", b, 0, fixed_opponent_factory, store_cond=cond)
            opp_returns.append(theirs[2].sum(axis=1))
            done += b
        n_ll_list[0] = n
    else:
        if len(learners) == 1:
            ll_flags = np.zeros(n, dtype=bool)
            if pool_cfg.learner_fraction > 0:
                raise ContractViolationError(
                    "learner-vs-learner episodes need at least two learners"
                )
        elif pool_cfg.ablation == "no_tabular" or pool_cfg.learner_fraction >= 1.0:
            ll_flags = np.ones(n, dtype=bool)
        else:
            ll_flags = rng.random(n) < pool_cfg.learner_fraction
        n_ll = int(ll_flags.sum())
        # Learner-vs-learner episodes are shared: they fill both quotas.
        done = 0
        while done < n_ll:
            b = min(chunk, n_ll - done)
            cond = np.zeros((b, cond_dim)) if cond_dim else None
            run_group(
                "ll", b, 0,
                lambda bb, rr: _make_controller(
                    learners[1], bb, rr, ppi_cfg, episode_cfg,
                    cond=np.zeros((bb, cond_dim)) if cond_dim else None,
                ),
                peer=1, store_cond=cond,
            )
            done += b
        for i in range(len(learners)):
            n_lt = n - n_ll
            n_ll_list[i] = n_ll
            n_lt_list[i] = n_lt
            done = 0
            while done < n_lt:
                b = min(chunk, n_lt - done)
                policies = [sample_uniform(rng) for _ in range(b)]
                coop = np.stack([p.coop_probs() for p in policies])
                cond = (
                    np.stack([conditioning_vector(p) for p in policies])
                    if cond_dim
                    else None
                )
                run_group(
                    "lt", b, i,
                    lambda bb, rr, c=coop: TabularBatchController(c, rr),
                    store_cond=cond,
                )
                done += b

    stats = []
    for i, data in enumerate(per_learner):
        groups = data["ll"] + data["lt"]
        if not groups:
            continue
        coop, ret = _aggregate(groups)
        coop_ll = _aggregate(data["ll"])[0] if data["ll"] else None
        coop_lt = _aggregate(data["lt"])[0] if data["lt"] else None
        stats.append(
            PhaseStats(
                phase=phase,
                learner=i,
                n_ll=n_ll_list[i],
                n_lt=n_lt_list[i],
                coop_rate=coop,
                coop_rate_ll=coop_ll,
                coop_rate_lt=coop_lt,
                return_mean=ret,
                on_path_kl=float(np.mean(data["kl"])) if data["kl"] else 0.0,
                q_flatness=float(np.mean(data["spread"])) if data["spread"] else 0.0,
                seq_loss_final=learners[i].loss_curve[-1] if learners[i].loss_curve else float("nan"),
                seq_loss_curve=list(learners[i].loss_curve),
                opp_return_mean=(
                    float(np.concatenate(opp_returns).mean())
                    if opp_returns and i == 0
                    else None
                ),
            )
        )
    return stats
