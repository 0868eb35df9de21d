"""GRU sequence model with modality embeddings, four output heads, and
exact backpropagation through time, on plain float64 numpy arrays.

The model consumes one position per game round. The input at position t is
the sum of three projections: the current observation (one-hot), the
previous round's own action (one-hot), and the reward that arrived with the
*previous* observation (a scalar; i.e. the payoff earned two rounds back).
That lag keeps the reward head's target at position t -- the payoff revealed
by the observation just consumed -- out of its own inputs, so next-token
training is never a copy task and model rollouts stay causal.

Heads read the Swish-activated hidden state and predict, at position t:
the action taken this round, the next observation, the payoff revealed by
the current observation, and (for actor-critic use) the state value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ContractViolationError, NonFiniteLossError
from .game import N_ACTIONS, N_OBSERVATIONS

ModelParams = dict[str, np.ndarray]
Gradients = dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelArch:
    hidden_dim: int = 128
    embed_dim: int = 32
    obs_vocab: int = N_OBSERVATIONS
    action_vocab: int = N_ACTIONS
    reward_input_dim: int = 1
    cond_dim: int = 0  # >0 only for the opponent-identity ablation

    def __post_init__(self):
        if min(self.hidden_dim, self.embed_dim, self.obs_vocab, self.action_vocab) < 1:
            raise ContractViolationError("all model dimensions must be >= 1")

    def block_shapes(self) -> dict[str, tuple[int, ...]]:
        h, e = self.hidden_dim, self.embed_dim
        shapes: dict[str, tuple[int, ...]] = {
            "obs_embed": (self.obs_vocab, e),
            "action_embed": (self.action_vocab, e),
            "reward_embed": (self.reward_input_dim, e),
            "gru_wx_zr": (e, 2 * h),
            "gru_wh_zr": (h, 2 * h),
            "gru_b_zr": (2 * h,),
            "gru_wx_n": (e, h),
            "gru_wh_n": (h, h),
            "gru_b_n": (h,),
            "head_obs_w": (h, self.obs_vocab),
            "head_obs_b": (self.obs_vocab,),
            "head_action_w": (h, self.action_vocab),
            "head_action_b": (self.action_vocab,),
            "head_reward_w": (h, 1),
            "head_reward_b": (1,),
            "head_value_w": (h, 1),
            "head_value_b": (1,),
        }
        if self.cond_dim > 0:
            shapes["cond_embed"] = (self.cond_dim, e)
        return shapes


def is_bias_block(name: str) -> bool:
    return name.endswith("_b") or name in ("gru_b_zr", "gru_b_n")


def init_params(arch: ModelArch, rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    params: ModelParams = {}
    for name, shape in arch.block_shapes().items():
        if is_bias_block(name):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zeros_like_params(params: ModelParams) -> Gradients:
    return {k: np.zeros_like(v) for k, v in params.items()}


def params_checksum(params: ModelParams) -> str:
    import hashlib

    digest = hashlib.sha256()
    for k in sorted(params):
        digest.update(k.encode())
        digest.update(np.ascontiguousarray(params[k]).tobytes())
    return digest.hexdigest()


def assert_params_finite(params: ModelParams) -> None:
    for k, v in params.items():
        if not np.all(np.isfinite(v)):
            raise ContractViolationError(f"non-finite values in parameter block {k!r}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for very negative x saturates to inf and divides to the
    # exact limit 0.0, so the plain form is correct across the whole range.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def swish(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class ModelInputs:
    """Integer/scalar input streams for a batch of equal-length sequences.

    ``prev_action`` uses -1 where the modality is missing (t=0);
    ``prev_reward_mask`` is 1.0 where a lagged reward is present (t>=2).
    ``cond``, when set, is projected and consumed as an extra first step.
    """

    obs: np.ndarray  # (B, T) int64
    prev_action: np.ndarray  # (B, T) int64, -1 = missing
    prev_reward: np.ndarray  # (B, T) float64
    prev_reward_mask: np.ndarray  # (B, T) float64
    cond: np.ndarray | None = None  # (B, C) float64

    @property
    def batch(self) -> int:
        return self.obs.shape[0]

    @property
    def length(self) -> int:
        return self.obs.shape[1]


def encode_sequences(
    obs: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    include_actions: bool = True,
    include_rewards: bool = True,
    cond: np.ndarray | None = None,
) -> ModelInputs:
    """Build the model's input streams from stored per-round arrays."""
    obs = np.asarray(obs, dtype=np.int64)
    b, t = obs.shape
    prev_action = np.full((b, t), -1, dtype=np.int64)
    prev_reward = np.zeros((b, t), dtype=np.float64)
    prev_mask = np.zeros((b, t), dtype=np.float64)
    if include_actions and t > 1:
        prev_action[:, 1:] = np.asarray(actions, dtype=np.int64)[:, :-1]
    if include_rewards and t > 2:
        prev_reward[:, 2:] = np.asarray(rewards, dtype=np.float64)[:, :-2]
        prev_mask[:, 2:] = 1.0
    return ModelInputs(obs, prev_action, prev_reward, prev_mask, cond=cond)


def embed_positions(params: ModelParams, inputs: ModelInputs) -> np.ndarray:
    """(B, P, E) embedded input sequence; P = T (+1 with a conditioning step)."""
    b, t = inputs.obs.shape
    e = params["obs_embed"].shape[1]
    x = params["obs_embed"][inputs.obs]  # (B, T, E)
    act = inputs.prev_action
    present = act >= 0
    if present.any():
        x = x + np.where(present[..., None], params["action_embed"][np.maximum(act, 0)], 0.0)
    x = x + (inputs.prev_reward * inputs.prev_reward_mask)[..., None] * params["reward_embed"][0]
    if inputs.cond is not None:
        z_step = inputs.cond @ params["cond_embed"]  # (B, E)
        x = np.concatenate([z_step[:, None, :], x], axis=1)
    return x


def embed_step(
    params: ModelParams,
    obs: int | np.ndarray,
    prev_action: int | np.ndarray | None,
    prev_reward: float | np.ndarray | None,
) -> np.ndarray:
    """Embed one position: sum of the per-modality projections.

    Missing modalities contribute a zero vector. Accepts scalars (returns
    (E,)) or batched arrays (returns (B, E); use -1 / nan-free masking by
    passing None only for an entirely absent modality).
    """
    scalar = np.isscalar(obs) or (isinstance(obs, np.ndarray) and obs.ndim == 0)
    obs_ids = np.atleast_1d(np.asarray(obs, dtype=np.int64))
    x = params["obs_embed"][obs_ids].copy()
    if prev_action is not None:
        act_ids = np.atleast_1d(np.asarray(prev_action, dtype=np.int64))
        present = act_ids >= 0
        x[present] += params["action_embed"][act_ids[present]]
    if prev_reward is not None:
        r = np.atleast_1d(np.asarray(prev_reward, dtype=np.float64))
        x += r[:, None] * params["reward_embed"][0]
    return x[0] if scalar else x


def gru_step(params: ModelParams, h: np.ndarray, x: np.ndarray) -> np.ndarray:
    """One batched GRU step; returns the raw (pre-Swish) next hidden state."""
    hdim = h.shape[-1]
    zr = sigmoid(x @ params["gru_wx_zr"] + h @ params["gru_wh_zr"] + params["gru_b_zr"])
    z, r = zr[..., :hdim], zr[..., hdim:]
    n = np.tanh(x @ params["gru_wx_n"] + (r * h) @ params["gru_wh_n"] + params["gru_b_n"])
    return (1.0 - z) * n + z * h


@dataclass
class ForwardCache:
    """Everything the backward pass needs, recorded per GRU position.

    Tapes are laid out (positions, batch, features) so per-step slices in
    the recurrence loops are contiguous.
    """

    inputs: ModelInputs
    x: np.ndarray  # (P, B, E) embedded inputs
    h: np.ndarray  # (P, B, H) raw hidden states (post-update, pre-Swish)
    z: np.ndarray  # (P, B, H) update gates
    r: np.ndarray  # (P, B, H) reset gates
    n: np.ndarray  # (P, B, H) candidate states
    s: np.ndarray  # (P, B, H) Swish(h), the head input
    sig_h: np.ndarray  # (P, B, H) sigmoid(h), reused by the Swish backward

    def hidden_bp(self) -> np.ndarray:
        """Raw hidden states in (batch, position, hidden) order."""
        return self.h.transpose(1, 0, 2)


def _gru_forward_tape(
    params: ModelParams, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Recurrence over a (P, B, E) input tape from a zero initial state."""
    p, b, _ = x.shape
    hdim = params["gru_wh_n"].shape[0]
    h_all = np.empty((p, b, hdim), dtype=np.float64)
    z_all = np.empty_like(h_all)
    r_all = np.empty_like(h_all)
    n_all = np.empty_like(h_all)
    if p == 0:
        return h_all, z_all, r_all, n_all
    h = np.zeros((b, hdim), dtype=np.float64)
    wh_zr, b_zr = params["gru_wh_zr"], params["gru_b_zr"]
    wh_n, b_n = params["gru_wh_n"], params["gru_b_n"]
    # Input-to-gate projections for all steps at once.
    x2 = x.reshape(p * b, -1)
    pre_zr_x = (x2 @ params["gru_wx_zr"]).reshape(p, b, -1)
    pre_n_x = (x2 @ params["gru_wx_n"]).reshape(p, b, -1)
    for t in range(p):
        zr = sigmoid(pre_zr_x[t] + h @ wh_zr + b_zr)
        z, r = zr[:, :hdim], zr[:, hdim:]
        n = np.tanh(pre_n_x[t] + (r * h) @ wh_n + b_n)
        h = (1.0 - z) * n + z * h
        h_all[t], z_all[t], r_all[t], n_all[t] = h, z, r, n
    return h_all, z_all, r_all, n_all


def gru_forward(
    params: ModelParams, x: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Run the recurrence over (B, P, E) inputs from a zero initial state.

    Returns raw hidden states (B, P, H) and the per-step gate tape.
    """
    x_tape = np.ascontiguousarray(np.transpose(x, (1, 0, 2)))
    h, z, r, n = _gru_forward_tape(params, x_tape)
    bp = lambda a: a.transpose(1, 0, 2)
    return bp(h), {"z": bp(z), "r": bp(r), "n": bp(n)}


def forward_sequence(params: ModelParams, inputs: ModelInputs) -> ForwardCache:
    x = np.ascontiguousarray(np.transpose(embed_positions(params, inputs), (1, 0, 2)))
    h_all, z_all, r_all, n_all = _gru_forward_tape(params, x)
    sig_h = sigmoid(h_all)
    return ForwardCache(
        inputs=inputs,
        x=x,
        h=h_all,
        z=z_all,
        r=r_all,
        n=n_all,
        s=h_all * sig_h,
        sig_h=sig_h,
    )


@dataclass
class HeadOutputs:
    obs_logits: np.ndarray  # (..., 5)
    action_logits: np.ndarray  # (..., 2)
    reward_mean: np.ndarray  # (...)
    value: np.ndarray  # (...)


def heads(params: ModelParams, hidden: np.ndarray) -> HeadOutputs:
    """Affine heads over the Swish-activated hidden state(s)."""
    s = swish(hidden)
    return HeadOutputs(
        obs_logits=s @ params["head_obs_w"] + params["head_obs_b"],
        action_logits=s @ params["head_action_w"] + params["head_action_b"],
        reward_mean=(s @ params["head_reward_w"])[..., 0] + params["head_reward_b"][0],
        value=(s @ params["head_value_w"])[..., 0] + params["head_value_b"][0],
    )


def heads_from_cache(params: ModelParams, cache: ForwardCache) -> HeadOutputs:
    """Head outputs over the whole tape, in (batch, position, ...) order."""
    p, b, hdim = cache.s.shape
    s2 = cache.s.reshape(p * b, hdim)

    def head(w, bias):
        return (s2 @ w + bias).reshape(p, b, -1).transpose(1, 0, 2)

    return HeadOutputs(
        obs_logits=head(params["head_obs_w"], params["head_obs_b"]),
        action_logits=head(params["head_action_w"], params["head_action_b"]),
        reward_mean=head(params["head_reward_w"], params["head_reward_b"])[..., 0],
        value=head(params["head_value_w"], params["head_value_b"])[..., 0],
    )


def backward_sequence(
    params: ModelParams,
    cache: ForwardCache,
    d_obs_logits: np.ndarray | None = None,
    d_action_logits: np.ndarray | None = None,
    d_reward_mean: np.ndarray | None = None,
    d_value: np.ndarray | None = None,
) -> Gradients:
    """Exact reverse-mode gradients of a scalar loss through heads and BPTT.

    The caller supplies d(loss)/d(head output) arrays shaped like the head
    outputs over all (batch, position) pairs; missing heads contribute
    nothing. Returns gradients for every parameter block.
    """
    p, b, hdim = cache.h.shape
    grads = zeros_like_params(params)
    s2 = cache.s.reshape(p * b, hdim)

    def tape(d, width):
        return np.ascontiguousarray(np.transpose(d, (1, 0, 2))).reshape(p * b, width)

    d_s = np.zeros((p * b, hdim), dtype=np.float64)
    if d_obs_logits is not None:
        d2 = tape(d_obs_logits, params["head_obs_b"].size)
        grads["head_obs_w"] += s2.T @ d2
        grads["head_obs_b"] += d2.sum(axis=0)
        d_s += d2 @ params["head_obs_w"].T
    if d_action_logits is not None:
        d2 = tape(d_action_logits, params["head_action_b"].size)
        grads["head_action_w"] += s2.T @ d2
        grads["head_action_b"] += d2.sum(axis=0)
        d_s += d2 @ params["head_action_w"].T
    if d_reward_mean is not None:
        d2 = tape(d_reward_mean[..., None], 1)
        grads["head_reward_w"] += s2.T @ d2
        grads["head_reward_b"] += d2.sum(axis=0)
        d_s += d2 @ params["head_reward_w"].T
    if d_value is not None:
        d2 = tape(d_value[..., None], 1)
        grads["head_value_w"] += s2.T @ d2
        grads["head_value_b"] += d2.sum(axis=0)
        d_s += d2 @ params["head_value_w"].T

    # Swish backward: ds/dh = sig(h) * (1 + h * (1 - sig(h)))
    sig2 = cache.sig_h.reshape(p * b, hdim)
    d_h_direct = (
        d_s * sig2 * (1.0 + cache.h.reshape(p * b, hdim) * (1.0 - sig2))
    ).reshape(p, b, hdim)

    wh_zr, wh_n = params["gru_wh_zr"], params["gru_wh_n"]
    wx_zr, wx_n = params["gru_wx_zr"], params["gru_wx_n"]
    # Per-step recurrence backward; pre-activation gradients are banked and
    # turned into weight gradients with a few large matmuls afterwards.
    d_npre_all = np.empty((p, b, hdim), dtype=np.float64)
    d_zrpre_all = np.empty((p, b, 2 * hdim), dtype=np.float64)
    h_prev_all = np.empty((p, b, hdim), dtype=np.float64)
    if p > 0:
        h_prev_all[0] = 0.0
        h_prev_all[1:] = cache.h[:-1]
    d_h = np.zeros((b, hdim), dtype=np.float64)
    for t in range(p - 1, -1, -1):
        d_h = d_h + d_h_direct[t]
        z, r, n = cache.z[t], cache.r[t], cache.n[t]
        h_prev = h_prev_all[t]
        # h = (1-z)*n + z*h_prev
        d_z = d_h * (h_prev - n)
        d_n = d_h * (1.0 - z)
        d_hprev = d_h * z
        # candidate: n = tanh(x Wxn + (r*h_prev) Whn + bn)
        d_npre = d_n * (1.0 - n * n)
        d_npre_all[t] = d_npre
        d_rh = d_npre @ wh_n.T
        d_r = d_rh * h_prev
        d_hprev += d_rh * r
        # gates: [z|r] = sigmoid(x Wxzr + h_prev Whzr + bzr)
        d_zrpre = d_zrpre_all[t]
        np.multiply(d_z, z * (1.0 - z), out=d_zrpre[:, :hdim])
        np.multiply(d_r, r * (1.0 - r), out=d_zrpre[:, hdim:])
        d_hprev += d_zrpre @ wh_zr.T
        d_h = d_hprev

    x2 = cache.x.reshape(p * b, -1)
    npre2 = d_npre_all.reshape(p * b, hdim)
    zrpre2 = d_zrpre_all.reshape(p * b, 2 * hdim)
    rh2 = (cache.r * h_prev_all).reshape(p * b, hdim)
    hprev2 = h_prev_all.reshape(p * b, hdim)
    grads["gru_wx_n"] += x2.T @ npre2
    grads["gru_wh_n"] += rh2.T @ npre2
    grads["gru_b_n"] += npre2.sum(axis=0)
    grads["gru_wx_zr"] += x2.T @ zrpre2
    grads["gru_wh_zr"] += hprev2.T @ zrpre2
    grads["gru_b_zr"] += zrpre2.sum(axis=0)
    d_x = npre2 @ wx_n.T + zrpre2 @ wx_zr.T  # (P*B, E), tape order

    _accumulate_embed_grads(params, grads, cache.inputs, d_x, p, b)
    return grads


def _accumulate_embed_grads(
    params: ModelParams,
    grads: Gradients,
    inputs: ModelInputs,
    d_x: np.ndarray,
    p: int,
    b: int,
) -> None:
    """d_x is (P*B, E) in tape (position-major) order."""
    e = d_x.shape[1]
    d_main = d_x.reshape(p, b, e)
    if inputs.cond is not None:
        grads["cond_embed"] += inputs.cond.T @ d_main[0]
        d_main = d_main[1:]
    d_flat = d_main.reshape(-1, e)
    # Scatter-add via one-hot matmuls; vocabularies are tiny. Index arrays
    # are transposed into the same position-major order as the tape.
    flat_obs = inputs.obs.T.reshape(-1)
    onehot = np.zeros((flat_obs.size, grads["obs_embed"].shape[0]))
    onehot[np.arange(flat_obs.size), flat_obs] = 1.0
    grads["obs_embed"] += onehot.T @ d_flat
    act = inputs.prev_action.T.reshape(-1)
    present = act >= 0
    if present.any():
        onehot_a = np.zeros((act.size, grads["action_embed"].shape[0]))
        onehot_a[present, act[present]] = 1.0
        grads["action_embed"] += onehot_a.T @ d_flat
    scaled = (inputs.prev_reward * inputs.prev_reward_mask).T.reshape(-1)
    grads["reward_embed"][0] += scaled @ d_flat


def global_grad_norm(grads: Gradients) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def check_finite_loss(loss: float, step_index: int | None = None) -> float:
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss!r}", step_index=step_index)
    return float(loss)
