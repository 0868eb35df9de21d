"""Memory-1 tabular policies and an exact best-response oracle.

A tabular policy is five cooperation probabilities, one per own-perspective
observation (Start, CC, CD, DC, DD). Against such an opponent the decision
process is Markov in the last joint outcome, so a deterministic memory-1
responder attains the optimum and exhaustive enumeration of the 2^5
responders is an exact oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ConfigError
from .game import (
    N_OBSERVATIONS,
    EpisodeConfig,
    Observation,
    PERSPECTIVE_SWAP,
    joint_to_observation,
)


@dataclass(frozen=True)
class TabularPolicy:
    """Cooperation probabilities keyed by the observing agent's observation."""

    p_start: float
    p_cc: float
    p_cd: float
    p_dc: float
    p_dd: float

    def __post_init__(self):
        for name, v in self.as_dict().items():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0,1], got {v}")

    def as_dict(self) -> dict[str, float]:
        return {
            "p_start": self.p_start,
            "p_cc": self.p_cc,
            "p_cd": self.p_cd,
            "p_dc": self.p_dc,
            "p_dd": self.p_dd,
        }

    def coop_probs(self) -> np.ndarray:
        """(5,) cooperation probability indexed by observation."""
        return np.array(
            [self.p_start, self.p_cc, self.p_cd, self.p_dc, self.p_dd],
            dtype=np.float64,
        )


NAMED_STRATEGIES = {
    "AllC": TabularPolicy(1.0, 1.0, 1.0, 1.0, 1.0),
    "AllD": TabularPolicy(0.0, 0.0, 0.0, 0.0, 0.0),
    # Cooperate iff the opponent cooperated last round; CD means "I cooperated,
    # they defected", DC means "I defected, they cooperated".
    "TFT": TabularPolicy(1.0, 1.0, 0.0, 1.0, 0.0),
    "Random50": TabularPolicy(0.5, 0.5, 0.5, 0.5, 0.5),
}


def named(name: str) -> TabularPolicy:
    try:
        return NAMED_STRATEGIES[name]
    except KeyError:
        raise ConfigError(
            f"unknown strategy {name!r}; choose from {sorted(NAMED_STRATEGIES)}"
        ) from None


def sample_uniform(rng: np.random.Generator) -> TabularPolicy:
    """All five parameters independently uniform on [0, 1]."""
    p = rng.random(5)
    return TabularPolicy(*p.tolist())


def act(p: TabularPolicy, obs: int, rng: np.random.Generator) -> int:
    """Sample an action given the current observation."""
    return int(rng.random() >= p.coop_probs()[int(obs)])


def policy_fn(p: TabularPolicy):
    """Adapt a TabularPolicy to the play_episode PolicyFn interface."""
    probs = p.coop_probs()

    def fn(_steps, obs):
        pc = probs[int(obs)]
        return np.array([pc, 1.0 - pc], dtype=np.float64)

    return fn


@dataclass(frozen=True)
class BestResponseResult:
    br_policy: TabularPolicy
    br_value: float
    opp_value: float


def _policy_values(
    responder_coop: np.ndarray,
    opponent: TabularPolicy,
    cfg: EpisodeConfig,
    gamma: float,
) -> tuple[float, float]:
    """Exact expected discounted returns (responder, opponent) over the horizon.

    ``responder_coop`` is the responder's (5,) cooperation probability vector;
    works for stochastic responders too. Backward induction over
    (observation state, timestep) with the exact two-sided expectation.
    """
    table = cfg.payoff.table()
    # The opponent conditions on its own perspective of the same joint outcome.
    opp_coop = opponent.coop_probs()[PERSPECTIVE_SWAP]
    v_resp = np.zeros(N_OBSERVATIONS, dtype=np.float64)
    v_opp = np.zeros(N_OBSERVATIONS, dtype=np.float64)
    for _ in range(cfg.horizon):
        new_resp = np.zeros(N_OBSERVATIONS, dtype=np.float64)
        new_opp = np.zeros(N_OBSERVATIONS, dtype=np.float64)
        for s in range(N_OBSERVATIONS):
            pa = responder_coop[s]
            pb = opp_coop[s]
            for a, wa in ((0, pa), (1, 1.0 - pa)):
                if wa == 0.0:
                    continue
                for b, wb in ((0, pb), (1, 1.0 - pb)):
                    if wb == 0.0:
                        continue
                    nxt = joint_to_observation(a, b)
                    w = wa * wb
                    new_resp[s] += w * (table[a, b] + gamma * v_resp[nxt])
                    new_opp[s] += w * (table[b, a] + gamma * v_opp[nxt])
        v_resp, v_opp = new_resp, new_opp
    s0 = int(Observation.START)
    return float(v_resp[s0]), float(v_opp[s0])


def policy_value(
    responder: TabularPolicy,
    opponent: TabularPolicy,
    cfg: EpisodeConfig,
    gamma: float = 1.0,
) -> float:
    """Exact expected discounted return of any memory-1 responder."""
    return _policy_values(responder.coop_probs(), opponent, cfg, gamma)[0]


def best_response(
    opponent: TabularPolicy, cfg: EpisodeConfig, gamma: float = 1.0
) -> BestResponseResult:
    """Exhaustive exact best response among deterministic memory-1 policies.

    Ties break toward the lexicographically smallest cooperation vector
    (ordered p_start, p_cc, p_cd, p_dc, p_dd), i.e. defection preferred.
    """
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must lie in (0,1], got {gamma}")
    best: tuple[float, float, tuple[float, ...]] | None = None
    for bits in product((0.0, 1.0), repeat=5):
        coop = np.array(bits, dtype=np.float64)
        value, opp_value = _policy_values(coop, opponent, cfg, gamma)
        if best is None or value > best[0] or (value == best[0] and bits < best[2]):
            best = (value, opp_value, bits)
    value, opp_value, bits = best
    return BestResponseResult(
        br_policy=TabularPolicy(*bits), br_value=value, opp_value=opp_value
    )
