"""Integrity measures and threshold-based detection."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .blockvec import BlockVec
from .errors import ConfigError


def robot_integrity(block) -> float:
    """Euclidean norm of one robot's reconstructed error block."""
    return float(np.linalg.norm(np.asarray(block, dtype=float)))


@dataclass(frozen=True)
class IntegrityReport:
    step: int
    chi_i: tuple[float, ...]
    chi: float
    detected: frozenset[int]
    swarm_alarm: bool

    def to_dict(self) -> dict:
        return {"step": self.step, "chi_i": list(self.chi_i), "chi": self.chi,
                "detected": sorted(self.detected), "swarm_alarm": self.swarm_alarm}


def check_epsilon(epsilon: float) -> float:
    if not epsilon > 0:
        raise ConfigError("epsilon", f"integrity threshold must be > 0, got {epsilon}")
    return float(epsilon)


def evaluate(blocks, epsilon: float, step: int = 0) -> IntegrityReport:
    """Threshold the per-robot and swarm integrity measures.

    ``blocks`` is a :class:`BlockVec` or a sequence of per-robot vectors.
    Both tests use strict inequality against the same ``epsilon``.
    """
    eps = check_epsilon(epsilon)
    if isinstance(blocks, BlockVec):
        chi_i = blocks.block_norms()
    else:
        chi_i = np.array([robot_integrity(b) for b in blocks])
    chi = float(np.sum(chi_i))
    detected = frozenset(int(i) for i in np.flatnonzero(chi_i > eps))
    return IntegrityReport(int(step), tuple(float(c) for c in chi_i), chi, detected, chi > eps)


class Confirmation:
    """Raise a detection only after ``k`` consecutive over-threshold steps.

    Each call to :meth:`update` returns the robots over threshold in each of
    the last ``k`` reports and whether the swarm alarm held for all of them.
    """

    def __init__(self, k: int = 3):
        if k < 1:
            raise ConfigError("confirm_k", f"must be >= 1, got {k}")
        self.k = k
        self._window: deque[IntegrityReport] = deque(maxlen=k)

    def update(self, report: IntegrityReport) -> tuple[frozenset[int], bool]:
        self._window.append(report)
        if len(self._window) < self.k:
            return frozenset(), False
        confirmed = frozenset.intersection(*(r.detected for r in self._window))
        return confirmed, all(r.swarm_alarm for r in self._window)


def write_jsonl(reports: Iterable[IntegrityReport], fh: IO[str]):
    """One JSON object per report, one report per line."""
    for r in reports:
        fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_jsonl(fh: IO[str]) -> list[IntegrityReport]:
    out = []
    for line in fh:
        if line.strip():
            d = json.loads(line)
            out.append(IntegrityReport(d["step"], tuple(d["chi_i"]), d["chi"],
                                       frozenset(d["detected"]), d["swarm_alarm"]))
    return out
