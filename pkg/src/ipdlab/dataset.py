"""Append-only trajectory dataset with phase-of-origin tags.

Records are per-agent perspectives stored as dense arrays; all records in
one dataset share a horizon. Persists to the line-delimited trajectory
format (one JSON record per line, integer encodings from game.py).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolationError
from .game import Trajectory


@dataclass
class TrajectoryDataset:
    horizon: int
    cond_dim: int = 0
    _obs: list[np.ndarray] = field(default_factory=list)
    _act: list[np.ndarray] = field(default_factory=list)
    _rew: list[np.ndarray] = field(default_factory=list)
    _cond: list[np.ndarray] = field(default_factory=list)
    _phase: list[np.ndarray] = field(default_factory=list)
    _agent: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return sum(a.shape[0] for a in self._obs)

    def add_batch(
        self,
        obs: np.ndarray,
        actions: np.ndarray,
        rewards: np.ndarray,
        phase: int,
        agent_index: np.ndarray | int = 0,
        cond: np.ndarray | None = None,
    ) -> None:
        obs = np.asarray(obs, dtype=np.int64)
        if obs.ndim != 2 or obs.shape[1] != self.horizon:
            raise ContractViolationError(
                f"expected (n, {self.horizon}) observations, got {obs.shape}"
            )
        n = obs.shape[0]
        self._obs.append(obs)
        self._act.append(np.asarray(actions, dtype=np.int64))
        self._rew.append(np.asarray(rewards, dtype=np.float64))
        if self.cond_dim:
            if cond is None:
                cond = np.zeros((n, self.cond_dim), dtype=np.float64)
            self._cond.append(np.asarray(cond, dtype=np.float64))
        elif cond is not None:
            raise ContractViolationError("dataset was created without a cond channel")
        self._phase.append(np.full(n, phase, dtype=np.int64))
        agent = np.full(n, agent_index, dtype=np.int64) if np.isscalar(agent_index) else agent_index
        self._agent.append(np.asarray(agent, dtype=np.int64))

    def add_trajectories(self, trajectories: list[Trajectory], phase: int) -> None:
        if not trajectories:
            return
        self.add_batch(
            np.stack([t.observations for t in trajectories]),
            np.stack([t.actions for t in trajectories]),
            np.stack([t.rewards for t in trajectories]),
            phase=phase,
            agent_index=np.array([t.agent_index for t in trajectories]),
        )

    def copy(self) -> "TrajectoryDataset":
        """Independent deep copy (records are duplicated, not shared)."""
        dup = TrajectoryDataset(horizon=self.horizon, cond_dim=self.cond_dim)
        dup._obs = [a.copy() for a in self._obs]
        dup._act = [a.copy() for a in self._act]
        dup._rew = [a.copy() for a in self._rew]
        dup._cond = [a.copy() for a in self._cond]
        dup._phase = [a.copy() for a in self._phase]
        dup._agent = [a.copy() for a in self._agent]
        return dup

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray | None]:
        """(obs, actions, rewards, cond-or-None) over all records."""
        if not self._obs:
            empty = np.zeros((0, self.horizon))
            return empty.astype(np.int64), empty.astype(np.int64), empty, None
        obs = np.concatenate(self._obs)
        act = np.concatenate(self._act)
        rew = np.concatenate(self._rew)
        cond = np.concatenate(self._cond) if self.cond_dim else None
        return obs, act, rew, cond

    @property
    def phases(self) -> np.ndarray:
        if not self._phase:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(self._phase)

    def save(self, path: str | Path) -> int:
        """Write one JSON record per line; returns the number of lines."""
        path = Path(path)
        obs, act, rew, cond = self.as_arrays()
        phases = self.phases
        agents = np.concatenate(self._agent) if self._agent else np.zeros(0, dtype=np.int64)
        with path.open("w") as fh:
            for i in range(obs.shape[0]):
                record = {
                    "agent_index": int(agents[i]),
                    "observations": obs[i].tolist(),
                    "actions": act[i].tolist(),
                    "rewards": rew[i].tolist(),
                    "phase": int(phases[i]),
                }
                if cond is not None:
                    record["cond"] = cond[i].tolist()
                fh.write(json.dumps(record) + "\n")
        return obs.shape[0]

    @classmethod
    def load(cls, path: str | Path, horizon: int, cond_dim: int = 0) -> "TrajectoryDataset":
        ds = cls(horizon=horizon, cond_dim=cond_dim)
        obs, act, rew, cond, phase, agent = [], [], [], [], [], []
        with Path(path).open() as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                obs.append(record["observations"])
                act.append(record["actions"])
                rew.append(record["rewards"])
                phase.append(record.get("phase", 0))
                agent.append(record.get("agent_index", 0))
                if cond_dim:
                    cond.append(record.get("cond", [0.0] * cond_dim))
        if not obs:
            return ds
        groups: dict[int, list[int]] = {}
        for i, p in enumerate(phase):
            groups.setdefault(p, []).append(i)
        for p in sorted(groups):
            idx = groups[p]
            ds.add_batch(
                np.array([obs[i] for i in idx]),
                np.array([act[i] for i in idx]),
                np.array([rew[i] for i in idx]),
                phase=p,
                agent_index=np.array([agent[i] for i in idx]),
                cond=np.array([cond[i] for i in idx]) if cond_dim else None,
            )
        return ds
