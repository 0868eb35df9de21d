"""AdamW with decoupled weight decay and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import Gradients, ModelParams, global_grad_norm, is_bias_block


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-8
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")


@dataclass
class OptState:
    m: Gradients
    v: Gradients
    step: int = 0

    @classmethod
    def init(cls, params: ModelParams) -> "OptState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
        )


def clip_by_global_norm(grads: Gradients, max_norm: float) -> tuple[Gradients, float]:
    """Scale gradients so their joint L2 norm is at most max_norm.

    Returns the (possibly rescaled) gradients and the pre-clip norm.
    """
    if max_norm <= 0:
        raise ConfigError(f"max_norm must be > 0, got {max_norm}")
    norm = global_grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adamw_step(
    params: ModelParams, grads: Gradients, opt: OptState, cfg: OptimizerConfig
) -> tuple[ModelParams, OptState]:
    """One decoupled-weight-decay Adam update with bias correction.

    Weight decay multiplies weights by (1 - lr*wd) in the same step and is
    not applied to bias blocks. Functional: returns fresh params and state.
    """
    t = opt.step + 1
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    new_params: ModelParams = {}
    new_m: Gradients = {}
    new_v: Gradients = {}
    for k, p in params.items():
        g = grads[k]
        m = cfg.beta1 * opt.m[k] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * opt.v[k] + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        if cfg.weight_decay != 0.0 and not is_bias_block(k):
            new_params[k] = p * (1.0 - cfg.learning_rate * cfg.weight_decay) - update
        else:
            new_params[k] = p - update
        new_m[k] = m
        new_v[k] = v
    return new_params, OptState(m=new_m, v=new_v, step=t)
