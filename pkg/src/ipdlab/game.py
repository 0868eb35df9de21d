"""Two-player iterated prisoner's dilemma as a finite-horizon POSG.

Actions and observations use stable integer encodings:
    actions:      Cooperate=0, Defect=1
    observations: Start=0, CC=1, CD=2, DC=3, DD=4
where the first letter of a non-Start observation is the observing
agent's OWN action in the previous round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolationError


class Action(IntEnum):
    COOPERATE = 0
    DEFECT = 1


class Observation(IntEnum):
    START = 0
    CC = 1
    CD = 2
    DC = 3
    DD = 4


N_ACTIONS = 2
N_OBSERVATIONS = 5

# Swapping perspective maps CD <-> DC and fixes Start, CC, DD.
PERSPECTIVE_SWAP = np.array([0, 1, 3, 2, 4], dtype=np.int64)


def joint_to_observation(own: int, other: int) -> int:
    """Encode a previous-round joint action from the observer's perspective."""
    return 1 + 2 * int(own) + int(other)


def observation_to_joint(obs: int) -> tuple[int, int]:
    """Decode a non-Start observation into (own action, other action)."""
    if obs == Observation.START:
        raise ContractViolationError("Start observation encodes no joint action")
    k = int(obs) - 1
    return k // 2, k % 2


@dataclass(frozen=True)
class PayoffMatrix:
    """Symmetric single-round payoffs, indexed by (own action, other action)."""

    cc: float = 1.0
    cd: float = -1.0
    dc: float = 2.0
    dd: float = 0.0

    def reward(self, own: int, other: int) -> float:
        return self.table()[int(own), int(other)]

    def table(self) -> np.ndarray:
        """(2, 2) array of the observer's reward for (own, other)."""
        return np.array([[self.cc, self.cd], [self.dc, self.dd]], dtype=np.float64)

    def reward_for_observation(self) -> np.ndarray:
        """Reward revealed by each observation (0.0 for Start)."""
        out = np.zeros(N_OBSERVATIONS, dtype=np.float64)
        for obs in range(1, N_OBSERVATIONS):
            own, other = observation_to_joint(obs)
            out[obs] = self.reward(own, other)
        return out


@dataclass(frozen=True)
class EpisodeConfig:
    horizon: int = 100
    payoff: PayoffMatrix = field(default_factory=PayoffMatrix)

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractViolationError(f"horizon must be >= 1, got {self.horizon}")


def payoff(a1: int, a2: int, m: PayoffMatrix) -> tuple[float, float]:
    """Row-player and column-player rewards for one simultaneous round."""
    return m.reward(a1, a2), m.reward(a2, a1)


def env_step(a1: int, a2: int, m: PayoffMatrix) -> tuple[int, int, float, float]:
    """One round: perspective observations for the next round plus both rewards."""
    r1, r2 = payoff(a1, a2, m)
    return joint_to_observation(a1, a2), joint_to_observation(a2, a1), r1, r2


@dataclass(frozen=True)
class Step:
    obs: int
    reward: float
    action: int


@dataclass
class Trajectory:
    """One agent's perspective of a full episode.

    ``steps[t]`` pairs the observation seen at round t (Start at t=0,
    otherwise the previous round's joint outcome from this agent's view)
    with the action taken at round t and the payoff that action earned.
    """

    steps: list[Step]
    agent_index: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def observations(self) -> np.ndarray:
        return np.array([s.obs for s in self.steps], dtype=np.int64)

    @property
    def actions(self) -> np.ndarray:
        return np.array([s.action for s in self.steps], dtype=np.int64)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps], dtype=np.float64)

    def total_return(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def validate(self, cfg: EpisodeConfig) -> None:
        """Check length, Start opening, and obs/action consistency."""
        if len(self.steps) != cfg.horizon:
            raise ContractViolationError(
                f"trajectory length {len(self.steps)} != horizon {cfg.horizon}"
            )
        if self.steps[0].obs != Observation.START:
            raise ContractViolationError("first observation must be Start")
        for t in range(1, len(self.steps)):
            own, _ = observation_to_joint(self.steps[t].obs)
            if own != self.steps[t - 1].action:
                raise ContractViolationError(
                    f"observation at step {t} inconsistent with action at step {t-1}"
                )


# A policy maps (completed own-perspective steps, current observation) to a
# probability distribution over {Cooperate, Defect}.
PolicyFn = Callable[[Sequence[Step], int], np.ndarray]

_DIST_TOL = 1e-6


def _sample_action(dist: np.ndarray, rng: np.random.Generator, who: str) -> int:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape != (N_ACTIONS,):
        raise ContractViolationError(f"{who}: distribution must have shape (2,)")
    if np.any(dist < -_DIST_TOL) or abs(float(dist.sum()) - 1.0) > _DIST_TOL:
        raise ContractViolationError(
            f"{who}: action distribution not normalized: {dist.tolist()}"
        )
    return int(rng.random() < np.clip(dist[1], 0.0, 1.0))


def play_episode(
    policy1: PolicyFn,
    policy2: PolicyFn,
    cfg: EpisodeConfig,
    rng: np.random.Generator,
) -> tuple[Trajectory, Trajectory]:
    """Run one full episode; returns both perspective trajectories.

    Actions are sampled here (policy1 first each round) so identical seeds
    and policies reproduce episodes bit-exactly.
    """
    o1, o2 = int(Observation.START), int(Observation.START)
    steps1: list[Step] = []
    steps2: list[Step] = []
    for _ in range(cfg.horizon):
        a1 = _sample_action(policy1(steps1, o1), rng, "policy1")
        a2 = _sample_action(policy2(steps2, o2), rng, "policy2")
        next_o1, next_o2, r1, r2 = env_step(a1, a2, cfg.payoff)
        steps1.append(Step(obs=o1, reward=r1, action=a1))
        steps2.append(Step(obs=o2, reward=r2, action=a2))
        o1, o2 = next_o1, next_o2
    return Trajectory(steps1, agent_index=0), Trajectory(steps2, agent_index=1)


def trajectory_to_json(traj: Trajectory, phase: int | None = None) -> str:
    """One-line JSON record; the interchange format between sampling and training."""
    record = {
        "agent_index": traj.agent_index,
        "observations": [int(s.obs) for s in traj.steps],
        "actions": [int(s.action) for s in traj.steps],
        "rewards": [float(s.reward) for s in traj.steps],
    }
    if phase is not None:
        record["phase"] = int(phase)
    return json.dumps(record)


def trajectory_from_json(line: str) -> tuple[Trajectory, int | None]:
    record = json.loads(line)
    obs = record["observations"]
    acts = record["actions"]
    rews = record["rewards"]
    if not (len(obs) == len(acts) == len(rews)):
        raise ContractViolationError("trajectory record field lengths differ")
    steps = [Step(obs=int(o), reward=float(r), action=int(a)) for o, r, a in zip(obs, rews, acts)]
    return Trajectory(steps, agent_index=int(record["agent_index"])), record.get("phase")
