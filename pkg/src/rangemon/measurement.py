"""Inter-robot range model, its Jacobian, and emulated noisy ranges."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockvec import BlockLayout, BlockVec, ShapeError
from .seeding import sample_bounded, stream
from .topology import SwarmGraph

GUARD_DISTANCE = 1e-6


class DegenerateGeometryError(ValueError):
    """Two robots are too close for the range gradient to be defined."""

    def __init__(self, edge: int, endpoints: tuple[int, int], distance: float):
        super().__init__(f"edge {edge} {endpoints} has length {distance:.3g} below the guard distance")
        self.edge = edge
        self.endpoints = endpoints
        self.distance = distance


@dataclass(frozen=True)
class NoiseConfig:
    """Norm bounds on range noise, estimation error, and agent noises.

    ``w_bound``/``v_bound`` are the squared-norm bounds on process and
    output noise of each agent; samples are drawn in balls of radius
    ``sqrt(bound)``.
    """

    omega_max: float = 0.02
    nu_max: float = 0.02
    w_bound: float = 0.0
    v_bound: float = 0.0
    law: str = "ball"

    def __post_init__(self):
        for name in ("omega_max", "nu_max", "w_bound", "v_bound"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.law not in ("ball", "box"):
            raise ValueError(f"law must be 'ball' or 'box', got {self.law!r}")


@dataclass(frozen=True)
class RangeModel:
    """Pairwise Euclidean ranges between the position parts of robot states."""

    graph: SwarmGraph
    layout: BlockLayout
    pos_slice: slice = slice(0, 3)
    m_l: int = 1

    def __post_init__(self):
        if self.layout.num_blocks != self.graph.num_vertices:
            raise ShapeError("layout must have one block per robot")
        start, stop = self.pos_slice.start or 0, self.pos_slice.stop
        if stop is None or start < 0 or stop > min(self.layout.block_dims) or not 1 <= stop - start <= 3:
            raise ShapeError(f"position slice {self.pos_slice} must pick 1..3 components present in every block")
        object.__setattr__(self, "pos_slice", slice(start, stop))
        if self.m_l != 1:
            raise ValueError("range edges carry exactly one measurement")

    @property
    def dim(self) -> int:
        return self.pos_slice.stop - self.pos_slice.start

    @property
    def num_measurements(self) -> int:
        return self.graph.num_edges * self.m_l

    @property
    def edge_layout(self) -> BlockLayout:
        return BlockLayout.uniform(self.graph.num_edges, self.m_l)

    def positions(self, p: BlockVec) -> np.ndarray:
        if p.layout != self.layout:
            raise ShapeError(f"state layout {p.layout.block_dims} does not match the model")
        return np.stack([b[self.pos_slice] for b in p.blocks()]) if p.layout.num_blocks else np.zeros((0, self.dim))


def _edge_arrays(graph: SwarmGraph) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(graph.edges, dtype=int).reshape(-1, 2)
    return e[:, 0], e[:, 1]


def phi(model: RangeModel, p: BlockVec) -> BlockVec:
    """Stacked ranges, one entry per edge in edge-id order."""
    pos = model.positions(p)
    a, b = _edge_arrays(model.graph)
    return BlockVec(model.edge_layout, np.linalg.norm(pos[a] - pos[b], axis=1))


@dataclass(frozen=True)
class RangeJacobian:
    """Range Jacobian stored as one unit direction per edge.

    Row ``l`` for edge ``(i, j)`` holds ``+u_l`` in block ``i`` and ``-u_l`` in
    block ``j`` on the position components, zero elsewhere.
    """

    model: RangeModel
    directions: np.ndarray  # (num_edges, d)

    def block(self, l: int, i: int) -> np.ndarray:
        """Row-block ``R[l, i]`` as a length-``n_i`` vector."""
        out = np.zeros(self.model.layout.block_dims[i])
        a, b = self.model.graph.edges[l]
        if i == a:
            out[self.model.pos_slice] = self.directions[l]
        elif i == b:
            out[self.model.pos_slice] = -self.directions[l]
        return out

    def toarray(self) -> np.ndarray:
        layout = self.model.layout
        out = np.zeros((self.model.graph.num_edges, layout.total_dim))
        off = np.asarray(layout.offsets[:-1])
        cols = np.arange(self.model.pos_slice.start, self.model.pos_slice.stop)
        for l, (a, b) in enumerate(self.model.graph.edges):
            out[l, off[a] + cols] = self.directions[l]
            out[l, off[b] + cols] = -self.directions[l]
        return out


def unit_directions(pos: np.ndarray, edges, guard: float = GUARD_DISTANCE) -> np.ndarray:
    """Unit vectors ``(p_i - p_j)/||p_i - p_j||`` for each edge ``(i, j)``."""
    e = np.asarray(edges, dtype=int).reshape(-1, 2)
    diff = pos[e[:, 0]] - pos[e[:, 1]]
    dist = np.linalg.norm(diff, axis=1)
    bad = np.flatnonzero(~(dist >= guard))
    if bad.size:
        l = int(bad[0])
        raise DegenerateGeometryError(l, (int(e[l, 0]), int(e[l, 1])), float(dist[l]))
    return diff / dist[:, None]


def jacobian(model: RangeModel, p: BlockVec, guard: float = GUARD_DISTANCE) -> RangeJacobian:
    return RangeJacobian(model, unit_directions(model.positions(p), model.graph.edges, guard))


def sample_range_noise(model: RangeModel, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    return sample_bounded(rng, model.num_measurements, noise.omega_max, noise.law)


def emulate_ranges(model: RangeModel, p_true: BlockVec, noise: NoiseConfig, seed: int, *keys: int) -> BlockVec:
    """Noisy range readings ``Phi(p_true) + omega`` with ``||omega||_2 <= omega_max``.

    Mirrors a pose-to-range emulation node: true poses go in, one range per
    edge comes out. Draws are keyed by ``(seed, *keys)``.
    """
    y = phi(model, p_true)
    omega = sample_range_noise(model, noise, stream(seed, "range-noise", *keys))
    return BlockVec(y.layout, y.data + omega)
