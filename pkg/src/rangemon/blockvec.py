"""Block-structured vectors and mixed l2/lq block norms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ZERO_BLOCK_TOL = 1e-12


class ShapeError(ValueError):
    """Raised when two block objects do not share a layout."""


@dataclass(frozen=True)
class BlockLayout:
    """Immutable partition of a flat vector into consecutive blocks."""

    block_dims: tuple[int, ...]
    offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.block_dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"block dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "block_dims", dims)
        object.__setattr__(self, "offsets", tuple(np.concatenate([[0], np.cumsum(dims)]).tolist()))

    @classmethod
    def uniform(cls, num_blocks: int, dim: int) -> "BlockLayout":
        return cls((dim,) * num_blocks)

    @property
    def num_blocks(self) -> int:
        return len(self.block_dims)

    @property
    def total_dim(self) -> int:
        return self.offsets[-1]

    @property
    def is_uniform(self) -> bool:
        return len(set(self.block_dims)) <= 1

    def slice(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])


class BlockVec:
    """Flat real vector viewed as a sequence of blocks.

    Blocks returned by :meth:`block` are views into the underlying storage,
    so in-place edits on a block are visible through the vector.
    """

    __slots__ = ("layout", "data")

    def __init__(self, layout: BlockLayout, data=None):
        self.layout = layout
        if data is None:
            data = np.zeros(layout.total_dim)
        data = np.asarray(data, dtype=float).reshape(-1)
        if data.shape[0] != layout.total_dim:
            raise ShapeError(f"data has length {data.shape[0]}, layout expects {layout.total_dim}")
        if not np.all(np.isfinite(data)):
            raise ValueError("BlockVec entries must be finite")
        self.data = data

    @classmethod
    def from_blocks(cls, blocks: Iterable[Sequence[float]]) -> "BlockVec":
        blocks = [np.atleast_1d(np.asarray(b, dtype=float)) for b in blocks]
        layout = BlockLayout(tuple(len(b) for b in blocks))
        return cls(layout, np.concatenate(blocks) if blocks else np.zeros(0))

    @classmethod
    def from_array(cls, arr) -> "BlockVec":
        """Build from a 2-D ``(num_blocks, dim)`` array."""
        arr = np.asarray(arr, dtype=float)
        return cls(BlockLayout.uniform(arr.shape[0], arr.shape[1]), arr.reshape(-1))

    def block(self, i: int) -> np.ndarray:
        return self.data[self.layout.slice(i)]

    def blocks(self) -> list[np.ndarray]:
        return [self.block(i) for i in range(self.layout.num_blocks)]

    def as_array(self) -> np.ndarray:
        """``(num_blocks, dim)`` view; only valid for uniform layouts."""
        if not self.layout.is_uniform:
            raise ShapeError("as_array requires a uniform block layout")
        return self.data.reshape(self.layout.num_blocks, -1)

    def block_norms(self) -> np.ndarray:
        if self.layout.is_uniform and self.layout.num_blocks:
            return np.linalg.norm(self.as_array(), axis=1)
        return np.array([np.linalg.norm(b) for b in self.blocks()])

    def copy(self) -> "BlockVec":
        return BlockVec(self.layout, self.data.copy())

    def __len__(self):
        return self.layout.num_blocks

    def __add__(self, other: "BlockVec") -> "BlockVec":
        return block_axpy(1.0, other, self)

    def __sub__(self, other: "BlockVec") -> "BlockVec":
        return block_axpy(-1.0, other, self)

    def __mul__(self, alpha: float) -> "BlockVec":
        return BlockVec(self.layout, alpha * self.data)

    __rmul__ = __mul__

    def __repr__(self):
        return f"BlockVec({[b.tolist() for b in self.blocks()]})"


def norm_2q(v: BlockVec, q: float, zero_tol: float = ZERO_BLOCK_TOL) -> float:
    """Mixed block norm: l2 inside each block, lq across blocks.

    ``q=0`` counts blocks whose l2 norm exceeds ``zero_tol`` (block sparsity),
    ``q=inf`` is the largest block norm.
    """
    if q < 0 or math.isnan(q):
        raise ValueError(f"q must be non-negative, got {q}")
    norms = v.block_norms()
    if norms.size == 0:
        return 0 if q == 0 else 0.0
    if q == 0:
        return int(np.count_nonzero(norms > zero_tol))
    if math.isinf(q):
        return float(norms.max())
    if q == 1:
        return float(norms.sum())
    if q == 2:
        return float(np.sqrt(np.dot(norms, norms)))
    return float(np.sum(norms**q) ** (1.0 / q))


def block_axpy(alpha: float, x: BlockVec, y: BlockVec) -> BlockVec:
    """Return ``alpha * x + y`` as a new vector on the shared layout."""
    if x.layout != y.layout:
        raise ShapeError(f"layout mismatch: {x.layout.block_dims} vs {y.layout.block_dims}")
    return BlockVec(y.layout, alpha * x.data + y.data)
