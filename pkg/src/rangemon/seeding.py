"""Named, independent random streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(master_seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Generator keyed by ``(master_seed, purpose, *keys)``.

    Streams for different keys are statistically independent, and adding a new
    key (e.g. another robot) never shifts the draws of existing ones.
    """
    entropy = [int(master_seed) & 0xFFFFFFFF, _tag(purpose), *(int(k) & 0xFFFFFFFF for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sample_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    """Uniform sample from the closed Euclidean ball of the given radius."""
    if radius <= 0 or dim == 0:
        return np.zeros(dim)
    direction = rng.standard_normal(dim)
    nrm = np.linalg.norm(direction)
    while nrm == 0.0:
        direction = rng.standard_normal(dim)
        nrm = np.linalg.norm(direction)
    return direction / nrm * radius * rng.random() ** (1.0 / dim)


def sample_bounded(rng: np.random.Generator, dim: int, radius: float, law: str = "ball") -> np.ndarray:
    """Noise vector with ``||v||_2 <= radius`` under the named sampling law.

    ``ball`` draws uniformly in the ball; ``box`` draws each entry uniformly in
    ``[-radius/sqrt(dim), radius/sqrt(dim)]`` which keeps the same norm bound.
    """
    if law == "ball":
        return sample_ball(rng, dim, radius)
    if law == "box":
        if radius <= 0 or dim == 0:
            return np.zeros(dim)
        half = radius / np.sqrt(dim)
        return rng.uniform(-half, half, dim)
    raise ValueError(f"unknown noise law {law!r}")
