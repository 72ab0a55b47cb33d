"""Shared domain types: contexts, round records, epoch schedules, seeded streams."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "Context",
    "RoundTuple",
    "EpochSchedule",
    "Dataset",
    "Purpose",
    "RandomStream",
    "InvalidHorizonError",
    "split_into_epochs",
    "derive_stream",
]


class InvalidHorizonError(ValueError):
    pass


@dataclass(frozen=True)
class Context:
    """A context vector x drawn from a bounded box."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 1:
            raise ValueError("context must have at least one coordinate")
        if not np.all(np.isfinite(v)):
            raise ValueError("context entries must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size

    def check(self, d_x: int, x_max: float) -> None:
        if self.dim != d_x:
            raise ValueError(f"context has dimension {self.dim}, expected {d_x}")
        if np.any(np.abs(self.values) > x_max):
            raise ValueError(f"context leaves the box [-{x_max}, {x_max}]")


@dataclass(frozen=True)
class RoundTuple:
    """One stored interaction (x, b, z_used, a, r).

    ``covariate_used`` is the true covariate when ``observed`` is 1 and the
    imputed value otherwise.
    """

    context: Context
    observed: int
    covariate_used: float
    action: int
    reward: float


@dataclass(frozen=True)
class EpochSchedule:
    """Epoch boundaries 0 = beta_0 < beta_1 < ...

    With ``boundaries=None`` the geometric rule is used: a one-round first
    epoch followed by epochs that double in length, i.e. boundaries
    0, 1, 2, 4, 8, ...
    """

    boundaries: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.boundaries is None:
            return
        b = tuple(int(v) for v in self.boundaries)
        if len(b) < 2 or b[0] != 0:
            raise ValueError("explicit boundaries must start at 0 and have at least two entries")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError("epoch boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", b)

    def boundary(self, s: int) -> int:
        if s < 0:
            raise ValueError("epoch index must be nonnegative")
        if self.boundaries is None:
            return 0 if s == 0 else 2 ** (s - 1)
        if s >= len(self.boundaries):
            raise ValueError(f"explicit schedule has no boundary {s}")
        return self.boundaries[s]

    def covers(self, horizon: int) -> bool:
        return self.boundaries is None or self.boundaries[-1] >= horizon


def split_into_epochs(horizon: int, schedule: EpochSchedule | None = None) -> list[tuple[int, int]]:
    """Half-open round ranges (beta_{s-1}, beta_s] clipped at the horizon.

    Rounds are 1-indexed, so the range ``(lo, hi)`` holds rounds lo+1..hi.
    """
    if horizon < 2:
        raise InvalidHorizonError(f"horizon must be at least 2, got {horizon}")
    schedule = schedule or EpochSchedule()
    if not schedule.covers(horizon):
        raise ValueError("explicit epoch schedule ends before the horizon")
    ranges = []
    s = 1
    lo = 0
    while lo < horizon:
        hi = min(schedule.boundary(s), horizon)
        ranges.append((lo, hi))
        lo = hi
        s += 1
    return ranges


class Purpose(enum.IntEnum):
    """Independent random-stream purposes within one replication."""

    CONTEXT = 0
    COVARIATE_NOISE = 1
    REWARD_NOISE = 2
    MISSINGNESS = 3
    POLICY = 4
    SHUFFLE = 5
    ESTIMATION = 6
    CONSTRUCTION = 7


@dataclass
class RandomStream:
    """A PCG64 generator keyed by (seed, replication, purpose).

    Owned by exactly one replication worker; not safe to share.
    """

    seed: int
    replication: int
    purpose: Purpose
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.replication < 0:
            raise ValueError("replication index must be nonnegative")
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.replication), int(self.purpose)))
        self.rng = np.random.Generator(np.random.PCG64(ss))

    @property
    def stream_id(self) -> tuple[int, int]:
        return (self.replication, int(self.purpose))


def derive_stream(seed: int, replication: int, purpose: Purpose | str) -> RandomStream:
    if isinstance(purpose, str):
        purpose = Purpose[purpose.upper()]
    return RandomStream(seed=int(seed), replication=int(replication), purpose=Purpose(purpose))


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


class Dataset:
    """Columnar store of the rounds collected during one epoch.

    Insertion order is preserved. ``z_true`` and ``rounds`` are simulation
    bookkeeping (the learner never reads ``z_true`` of unobserved rows).
    """

    def __init__(
        self,
        contexts,
        observed,
        covariate_used,
        actions,
        rewards,
        *,
        z_true=None,
        rounds=None,
        epoch_index: int = 0,
    ) -> None:
        self.contexts = _frozen(contexts, float)
        if self.contexts.ndim != 2:
            raise ValueError("contexts must be a 2-d array (rows, d_x)")
        n = self.contexts.shape[0]
        self.observed = _frozen(observed, np.int8)
        self.covariate_used = _frozen(covariate_used, float)
        self.actions = _frozen(actions, np.int64)
        self.rewards = _frozen(rewards, float)
        self.z_true = None if z_true is None else _frozen(z_true, float)
        self.rounds = _frozen(np.arange(1, n + 1) if rounds is None else rounds, np.int64)
        self.epoch_index = int(epoch_index)
        for name in ("observed", "covariate_used", "actions", "rewards", "rounds"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per row")
        if self.z_true is not None and self.z_true.shape != (n,):
            raise ValueError("z_true must have one entry per row")

    @classmethod
    def from_rows(cls, rows: Sequence[RoundTuple], epoch_index: int = 0) -> "Dataset":
        if not rows:
            raise ValueError("cannot build a dataset from zero rows")
        return cls(
            np.stack([r.context.values for r in rows]),
            [r.observed for r in rows],
            [r.covariate_used for r in rows],
            [r.action for r in rows],
            [r.reward for r in rows],
            epoch_index=epoch_index,
        )

    def __len__(self) -> int:
        return self.contexts.shape[0]

    def __getitem__(self, i: int) -> RoundTuple:
        return RoundTuple(
            Context(self.contexts[i]),
            int(self.observed[i]),
            float(self.covariate_used[i]),
            int(self.actions[i]),
            float(self.rewards[i]),
        )

    def __iter__(self) -> Iterator[RoundTuple]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.contexts[index],
            self.observed[index],
            self.covariate_used[index],
            self.actions[index],
            self.rewards[index],
            z_true=None if self.z_true is None else self.z_true[index],
            rounds=self.rounds[index],
            epoch_index=self.epoch_index,
        )

    def observed_only(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.observed == 1))
