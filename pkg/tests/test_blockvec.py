import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rangemon.blockvec import BlockLayout, BlockVec, ShapeError, block_axpy, norm_2q

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def blockvecs(draw, layout=None):
    dims = layout or tuple(draw(st.lists(st.integers(1, 4), min_size=1, max_size=6)))
    data = draw(st.lists(finite, min_size=sum(dims), max_size=sum(dims)))
    return BlockVec(BlockLayout(dims), data)


@st.composite
def blockvec_pairs(draw):
    a = draw(blockvecs())
    b = draw(blockvecs(layout=a.layout.block_dims))
    return a, b


EXAMPLE = BlockVec.from_blocks([[3, 4], [0, 0], [1, 0]])


def test_examples():
    assert norm_2q(EXAMPLE, 1) == 6.0
    assert norm_2q(EXAMPLE, 0) == 2
    assert isinstance(norm_2q(EXAMPLE, 0), int)
    assert norm_2q(EXAMPLE, math.inf) == 5.0


def test_negative_q_rejected():
    with pytest.raises(ValueError):
        norm_2q(EXAMPLE, -1)


def test_zero_count_uses_threshold():
    v = BlockVec.from_blocks([[1e-13, 0.0], [1e-6, 0.0]])
    assert norm_2q(v, 0) == 1


def test_layout_invariants():
    lay = BlockLayout((2, 3, 1))
    assert lay.total_dim == 6 and lay.num_blocks == 3
    assert lay.slice(1) == slice(2, 5)
    with pytest.raises(ValueError):
        BlockLayout((2, 0))
    with pytest.raises(Exception):
        lay.block_dims = (1,)


def test_blocks_are_views_and_entries_finite():
    v = BlockVec(BlockLayout((2, 2)))
    v.block(1)[:] = [5.0, 6.0]
    assert v.data.tolist() == [0, 0, 5, 6]
    with pytest.raises(ValueError):
        BlockVec(BlockLayout((1,)), [np.nan])
    with pytest.raises(ShapeError):
        BlockVec(BlockLayout((2,)), [1.0])


def test_axpy_examples():
    x = BlockVec.from_blocks([[1], [2]])
    zero = BlockVec(x.layout)
    assert block_axpy(1, x, zero).data.tolist() == [1, 2]
    y = BlockVec.from_blocks([[7], [-3]])
    assert block_axpy(0, x, y).data.tolist() == y.data.tolist()
    assert not np.any(block_axpy(-1, y, y).data)
    with pytest.raises(ShapeError):
        block_axpy(1, x, BlockVec.from_blocks([[1, 2]]))


@given(blockvecs())
def test_norm_ordering(v):
    n0, n1, n2, ninf = (norm_2q(v, q) for q in (0, 1, 2, math.inf))
    tol = 1e-9 * (1 + n1)
    assert ninf <= n2 + tol
    assert n2 <= n1 + tol
    assert n1 <= n0 * ninf + tol


@given(blockvec_pairs(), st.sampled_from([1, 1.5, 2, 3, math.inf]))
def test_triangle_inequality(pair, q):
    a, b = pair
    assert norm_2q(a + b, q) <= norm_2q(a, q) + norm_2q(b, q) + 1e-9 * (1 + norm_2q(a, q) + norm_2q(b, q))


@given(blockvecs(), finite, st.sampled_from([0.5, 1, 2, math.inf]))
def test_homogeneity(v, alpha, q):
    assert math.isclose(norm_2q(alpha * v, q), abs(alpha) * norm_2q(v, q), rel_tol=1e-9, abs_tol=1e-9)


@given(blockvecs(), finite.filter(lambda a: abs(a) > 1e-3))
def test_sparsity_scale_invariant(v, alpha):
    assert norm_2q(alpha * v, 0, zero_tol=0.0) == norm_2q(v, 0, zero_tol=0.0)
