"""Measurement records and the append-only CSV writer.

Schema: ``experiment,algorithm,seed,outer,inner,metric,value``. ``outer`` is
the training phase (PPI) or update iteration (A2C); ``inner`` is the round
within an episode for within-episode curves, -1 for aggregates, and the
epoch index for the per-phase training-loss curve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractViolationError
from .game import Trajectory

CSV_FIELDS = ("experiment", "algorithm", "seed", "outer", "inner", "metric", "value")


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    algorithm: str
    seed: int
    outer: int
    inner: int
    metric: str
    value: float

    def key(self) -> tuple:
        return (self.experiment, self.seed, self.outer, self.inner, self.metric)


class MetricsWriter:
    """Single-writer CSV sink enforcing key uniqueness."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._keys: set[tuple] = set()
        new = not self.path.exists()
        self._fh = self.path.open("a", newline="")
        self._csv = csv.writer(self._fh)
        if new:
            self._csv.writerow(CSV_FIELDS)

    def add(self, row: MetricsRow) -> None:
        key = row.key()
        if key in self._keys:
            raise ContractViolationError(f"duplicate metrics key {key}")
        self._keys.add(key)
        self._csv.writerow(
            [row.experiment, row.algorithm, row.seed, row.outer, row.inner, row.metric,
             repr(float(row.value))]
        )

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.flush()
        self._fh.close()

    def __enter__(self) -> "MetricsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_metrics(path: str | Path) -> list[MetricsRow]:
    rows = []
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ContractViolationError(
                f"metrics file {path} lacks columns: {sorted(missing)}"
            )
        for rec in reader:
            rows.append(
                MetricsRow(
                    experiment=rec["experiment"],
                    algorithm=rec["algorithm"],
                    seed=int(rec["seed"]),
                    outer=int(rec["outer"]),
                    inner=int(rec["inner"]),
                    metric=rec["metric"],
                    value=float(rec["value"]),
                )
            )
    return rows


def cooperation_rate(traj: Trajectory, window: tuple[int, int] | None = None) -> float:
    """Fraction of Cooperate actions in rounds [start, stop)."""
    start, stop = window if window is not None else (0, len(traj))
    if not (0 <= start < stop <= len(traj)):
        raise ContractViolationError(f"empty or out-of-range window ({start}, {stop})")
    actions = traj.actions[start:stop]
    return float((actions == 0).mean())
