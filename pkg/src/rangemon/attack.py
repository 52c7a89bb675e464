"""Fault and spoofing injection schedules.

A schedule is a list of half-open step intervals ``[start, end)``, each with
the robots it compromises and a constant position offset per robot.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .blockvec import BlockLayout, BlockVec, ShapeError
from .errors import ConfigError
from .seeding import stream


class SparsityWarning(UserWarning):
    """A phase compromises half the swarm or more."""


@dataclass(frozen=True)
class AttackPhase:
    start: int
    end: int
    targets: tuple[int, ...]
    offsets: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        start, end = int(self.start), int(self.end)
        if start < 0:
            raise ConfigError("attack.phases.start", f"must be >= 0, got {start}")
        if not start < end:
            raise ConfigError("attack.phases.end", f"phase [{start}, {end}) is empty")
        targets = tuple(int(t) for t in self.targets)
        if not targets:
            raise ConfigError("attack.phases.targets", "a phase needs at least one target")
        if len(set(targets)) != len(targets):
            raise ConfigError("attack.phases.targets", f"repeated target in {list(targets)}")
        offsets = tuple(tuple(float(v) for v in row) for row in self.offsets)
        if len(offsets) != len(targets):
            raise ConfigError("attack.phases.offsets", "need exactly one offset per target")
        if len({len(row) for row in offsets}) != 1 or not 1 <= len(offsets[0]) <= 3:
            raise ConfigError("attack.phases.offsets", "offsets must share one length between 1 and 3")
        if not np.all(np.isfinite(offsets)):
            raise ConfigError("attack.phases.offsets", "offsets must be finite")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "offsets", offsets)

    def active(self, k: int) -> bool:
        return self.start <= k < self.end

    def offset_of(self, target: int) -> np.ndarray:
        return np.array(self.offsets[self.targets.index(target)])


@dataclass(frozen=True)
class AttackSchedule:
    """Ordered attack phases; overlapping phases may share a robot only with equal offsets."""

    phases: tuple[AttackPhase, ...] = ()

    def __post_init__(self):
        phases = tuple(sorted(self.phases, key=lambda p: (p.start, p.end)))
        for a_idx, a in enumerate(phases):
            for b in phases[a_idx + 1:]:
                if b.start >= a.end:
                    continue
                for t in set(a.targets) & set(b.targets):
                    if not np.array_equal(a.offset_of(t), b.offset_of(t)):
                        raise ConfigError(
                            "attack.phases",
                            f"robot {t} gets different offsets in overlapping phases "
                            f"[{a.start}, {a.end}) and [{b.start}, {b.end})")
        object.__setattr__(self, "phases", phases)

    @property
    def targets(self) -> frozenset[int]:
        return frozenset(t for p in self.phases for t in p.targets)

    def boundaries(self) -> list[int]:
        """Sorted steps at which the active set may change."""
        return sorted({s for p in self.phases for s in (p.start, p.end)})

    def max_offset_norm(self) -> float:
        return max((float(np.linalg.norm(row)) for p in self.phases for row in p.offsets), default=0.0)

    def validate_for(self, n_agents: int):
        """Check targets exist; warn when a phase breaks the sparse-attack assumption."""
        for p in self.phases:
            bad = [t for t in p.targets if not 0 <= t < n_agents]
            if bad:
                raise ConfigError("attack.phases.targets", f"robots {bad} outside 0..{n_agents - 1}")
            if not len(p.targets) < n_agents / 2:
                warnings.warn(f"phase [{p.start}, {p.end}) attacks {len(p.targets)} of {n_agents} robots; "
                              "reconstruction assumes a sparse attack", SparsityWarning, stacklevel=2)

    def to_dict(self) -> dict:
        return {"phases": [{"start": p.start, "end": p.end, "targets": list(p.targets),
                            "offsets": [list(o) for o in p.offsets]} for p in self.phases]}

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSchedule":
        try:
            raw = d["phases"]
            phases = tuple(AttackPhase(p["start"], p["end"], tuple(p["targets"]),
                                       tuple(tuple(o) for o in p["offsets"])) for p in raw)
        except (KeyError, TypeError) as exc:
            raise ConfigError("attack", f"malformed schedule: {exc!r}") from None
        return cls(phases)

    @classmethod
    def from_json(cls, text: str) -> "AttackSchedule":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def active_faults(s: AttackSchedule, k: int, layout: BlockLayout,
                  pos_start: int = 0) -> tuple[frozenset[int], BlockVec]:
    """Robots under attack at step ``k`` and their offsets as a block vector.

    Offsets land on the position components starting at ``pos_start``.
    """
    if k < 0:
        raise ValueError("step must be non-negative")
    f = BlockVec(layout)
    targets = set()
    for p in s.phases:
        if not p.active(k):
            continue
        for t, off in zip(p.targets, p.offsets):
            if t >= layout.num_blocks or pos_start + len(off) > layout.block_dims[t]:
                raise ShapeError(f"offset for robot {t} does not fit its state block")
            f.block(t)[pos_start:pos_start + len(off)] = off
            targets.add(t)
    return frozenset(targets), f


def horizontal_offsets(count: int, magnitude: float, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` offsets of the given length in uniformly random horizontal directions."""
    theta = rng.uniform(0.0, 2.0 * np.pi, count)
    out = np.zeros((count, dim))
    if dim == 1:
        out[:, 0] = magnitude * np.where(np.cos(theta) >= 0, 1.0, -1.0)
    else:
        out[:, 0] = magnitude * np.cos(theta)
        out[:, 1] = magnitude * np.sin(theta)
    return out


def random_schedule(n_agents: int, windows, counts, magnitude: float, dim: int, seed: int) -> AttackSchedule:
    """Schedule with disjoint random target sets, one per ``(start, end)`` window.

    Targets and directions come from the ``attack`` stream of ``seed`` so the
    schedule is reproducible per trial.
    """
    windows, counts = list(windows), list(counts)
    if len(windows) != len(counts):
        raise ConfigError("attack.counts", "need one target count per window")
    if sum(counts) > n_agents:
        raise ConfigError("attack.counts", f"{sum(counts)} targets requested from {n_agents} robots")
    rng = stream(seed, "attack")
    order = rng.permutation(n_agents)
    phases, used = [], 0
    for (start, end), c in zip(windows, counts):
        targets = sorted(int(t) for t in order[used:used + c])
        used += c
        offs = horizontal_offsets(c, magnitude, dim, rng)
        phases.append(AttackPhase(start, end, tuple(targets), tuple(map(tuple, offs))))
    return AttackSchedule(tuple(phases))
