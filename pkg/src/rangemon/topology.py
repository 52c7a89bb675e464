"""Sensing/communication graph of the swarm and time-varying schedules."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .seeding import stream


class GraphError(ValueError):
    """Invalid graph description (self-loop, duplicate edge, disconnected)."""


def _components(n: int, edges: Iterable[tuple[int, int]]) -> int:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    count = n
    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            count -= 1
    return count


@dataclass(frozen=True)
class SwarmGraph:
    """Undirected simple graph; edge ids are positions in ``edges``."""

    num_vertices: int
    edges: tuple[tuple[int, int], ...]
    _nbrs: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _inc: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _edge_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.num_vertices)
        if n < 1:
            raise GraphError("graph needs at least one vertex")
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        seen = {}
        nbrs = [[] for _ in range(n)]
        inc = [[] for _ in range(n)]
        for l, (i, j) in enumerate(edges):
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge {l}=({i},{j}) references a vertex outside 0..{n - 1}")
            if i == j:
                raise GraphError(f"edge {l} is a self-loop on vertex {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphError(f"edge {l}=({i},{j}) duplicates edge {seen[key]}")
            seen[key] = l
            nbrs[i].append(j)
            nbrs[j].append(i)
            inc[i].append(l)
            inc[j].append(l)
        if _components(n, edges) != 1:
            raise GraphError("graph is disconnected")
        object.__setattr__(self, "num_vertices", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_nbrs", tuple(tuple(sorted(v)) for v in nbrs))
        object.__setattr__(self, "_inc", tuple(tuple(sorted(v)) for v in inc))
        object.__setattr__(self, "_edge_of", seen)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def _check(self, i: int):
        if not 0 <= i < self.num_vertices:
            raise IndexError(f"vertex {i} out of range 0..{self.num_vertices - 1}")

    def neighbors(self, i: int) -> tuple[int, ...]:
        self._check(i)
        return self._nbrs[i]

    def incident_edges(self, i: int) -> tuple[int, ...]:
        self._check(i)
        return self._inc[i]

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def edge_between(self, i: int, j: int) -> int:
        """Edge id joining ``i`` and ``j``; KeyError when they are not adjacent."""
        return self._edge_of[(min(i, j), max(i, j))]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_vertices, self.num_vertices), dtype=int)
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1
        return a

    def laplacian(self) -> np.ndarray:
        a = self.adjacency()
        return np.diag(a.sum(axis=1)) - a

    def mean_degree(self) -> float:
        return 2.0 * self.num_edges / self.num_vertices

    def to_dict(self) -> dict:
        return {"n": self.num_vertices, "edges": [list(e) for e in self.edges]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SwarmGraph":
        return cls(int(d["n"]), tuple(tuple(e) for e in d["edges"]))

    @classmethod
    def from_json(cls, text: str) -> "SwarmGraph":
        return cls.from_dict(json.loads(text))


def path_graph(n: int) -> SwarmGraph:
    return SwarmGraph(n, tuple((i, i + 1) for i in range(n - 1)))


def complete_graph(n: int) -> SwarmGraph:
    return SwarmGraph(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))


def star_graph(n: int) -> SwarmGraph:
    return SwarmGraph(n, tuple((0, j) for j in range(1, n)))


def _pairs_within(positions: np.ndarray, radius: float) -> list[tuple[int, int]]:
    n = positions.shape[0]
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    return [(i, j) for i in range(n) for j in range(i + 1, n) if dist[i, j] <= radius]


def random_geometric_graph(n: int, radius: float, positions=None, seed: int = 0,
                           dim: int = 2) -> SwarmGraph:
    """Connect every pair closer than ``radius``.

    Positions default to a uniform draw in the unit box. A disconnected
    result grows the radius by 10% and retries until connected.
    """
    if n < 2:
        raise ValueError(f"random geometric graph needs n >= 2, got {n}")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if positions is None:
        positions = stream(seed, "rgg-positions").random((n, dim))
    pos = np.asarray(getattr(positions, "data", positions), dtype=float).reshape(n, -1)
    while True:
        edges = _pairs_within(pos, radius)
        if _components(n, edges) == 1:
            return SwarmGraph(n, tuple(edges))
        radius *= 1.1


def radius_for_mean_degree(positions: np.ndarray, mean_degree: float) -> float:
    """Smallest radius giving at least ``mean_degree * n / 2`` edges."""
    pos = np.asarray(positions, dtype=float)
    n = pos.shape[0]
    iu = np.triu_indices(n, 1)
    dist = np.sort(np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)[iu])
    k = int(np.clip(round(mean_degree * n / 2.0), 1, dist.size))
    return float(dist[k - 1])


@dataclass(frozen=True)
class TopologySchedule:
    """Piecewise-constant graph sequence indexed by simulation step."""

    phases: tuple[tuple[int, SwarmGraph], ...]

    def __post_init__(self):
        phases = tuple((int(s), g) for s, g in self.phases)
        if not phases or phases[0][0] != 0:
            raise ValueError("first topology phase must start at step 0")
        starts = [s for s, _ in phases]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("topology phase starts must be strictly increasing")
        n = {g.num_vertices for _, g in phases}
        if len(n) != 1:
            raise ValueError("all topology phases must have the same vertex count")
        object.__setattr__(self, "phases", phases)

    @classmethod
    def static(cls, graph: SwarmGraph) -> "TopologySchedule":
        return cls(((0, graph),))

    @property
    def num_vertices(self) -> int:
        return self.phases[0][1].num_vertices

    def phase_index(self, k: int) -> int:
        starts = [s for s, _ in self.phases]
        return bisect.bisect_right(starts, k) - 1

    def at(self, k: int) -> SwarmGraph:
        if k < 0:
            raise ValueError("step must be non-negative")
        return self.phases[self.phase_index(k)][1]

    def to_dict(self) -> dict:
        return {"phases": [{"start": s, "graph": g.to_dict()} for s, g in self.phases]}

    @classmethod
    def from_dict(cls, d: dict) -> "TopologySchedule":
        return cls(tuple((p["start"], SwarmGraph.from_dict(p["graph"])) for p in d["phases"]))

