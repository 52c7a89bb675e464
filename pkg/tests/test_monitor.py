import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rangemon.blockvec import BlockLayout, BlockVec, norm_2q
from rangemon.errors import ConfigError
from rangemon.monitor import Confirmation, IntegrityReport, evaluate, read_jsonl, robot_integrity, write_jsonl


def test_robot_integrity_examples():
    assert robot_integrity((0, 0, 0)) == 0.0
    assert robot_integrity((3, 4, 0)) == 5.0


def test_evaluate_examples():
    quiet = evaluate(BlockVec(BlockLayout.uniform(4, 3)), 0.2)
    assert quiet.detected == frozenset() and not quiet.swarm_alarm and quiet.chi == 0.0
    one = evaluate([(0, 0, 0), (0.6, 0.8, 0), (0, 0, 0)], 0.2, step=9)
    assert one.detected == {1} and one.swarm_alarm and one.step == 9


def test_threshold_is_strict():
    r = evaluate([(0.2, 0.0)], 0.2)
    assert r.detected == frozenset() and not r.swarm_alarm


def test_swarm_alarm_without_single_detection():
    r = evaluate([(0.15, 0.0), (0.0, 0.15)], 0.2)
    assert r.detected == frozenset() and r.swarm_alarm


@pytest.mark.parametrize("eps", [0.0, -1.0, float("nan")])
def test_nonpositive_epsilon_rejected(eps):
    with pytest.raises(ConfigError) as err:
        evaluate([(1.0,)], eps)
    assert err.value.field == "epsilon"


blocks = st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3), min_size=1, max_size=12)


@given(blocks=blocks, which=st.integers(0, 11), factor=st.floats(1.0, 10.0), eps=st.floats(0.01, 3.0))
def test_growing_a_block_never_shrinks_detection(blocks, which, factor, eps):
    arr = np.array(blocks)
    before = evaluate(arr, eps)
    arr[which % len(arr)] *= factor
    after = evaluate(arr, eps)
    assert before.detected <= after.detected
    assert after.chi >= before.chi - 1e-12


@given(blocks=blocks)
def test_swarm_integrity_is_l21_norm(blocks):
    v = BlockVec.from_array(np.array(blocks))
    r = evaluate(v, 1.0)
    assert r.chi == pytest.approx(norm_2q(v, 1), abs=1e-12)
    assert r.chi == pytest.approx(sum(r.chi_i), abs=1e-12)
    assert r.detected <= set(range(len(blocks)))


def test_jsonl_round_trip():
    reports = [evaluate(np.array([[0.1 * k, 0, 0], [0, 0.5, 0]]), 0.2, step=k) for k in range(4)]
    buf = io.StringIO()
    write_jsonl(reports, buf)
    assert buf.getvalue().count("\n") == 4
    buf.seek(0)
    assert read_jsonl(buf) == reports


def _report(step, detected, alarm=True):
    return IntegrityReport(step, (), 0.0, frozenset(detected), alarm)


def test_confirmation_needs_k_consecutive_hits():
    c = Confirmation(3)
    assert c.update(_report(0, {1, 2})) == (frozenset(), False)
    assert c.update(_report(1, {1, 2})) == (frozenset(), False)
    assert c.update(_report(2, {1})) == ({1}, True)
    assert c.update(_report(3, {1, 2}, alarm=False)) == ({1}, False)
    assert c.update(_report(4, set())) == (frozenset(), False)
    with pytest.raises(ConfigError):
        Confirmation(0)


def test_confirmation_with_k_one_is_instantaneous():
    c = Confirmation(1)
    assert c.update(_report(0, {4})) == ({4}, True)
