import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rangemon.blockvec import BlockLayout, BlockVec, ShapeError
from rangemon.config import ScenarioConfig
from rangemon.measurement import NoiseConfig
from rangemon.simworld import (
    AgentModel,
    DynamicsWorld,
    SimState,
    StabilityError,
    StaleDataError,
    consensus_input,
    consensus_inputs,
    double_integrator,
    kinematic_mode_step,
    spectral_radius,
    step_dynamics,
    step_estimator,
)
from rangemon.topology import SwarmGraph, path_graph, radius_for_mean_degree, random_geometric_graph
from rangemon.trial import build_formation

QUIET = NoiseConfig(omega_max=0.0, nu_max=0.0)

# Worst ||p - p_hat||_2 / (sqrt(W) + sqrt(V)) over 1000 attack-free steps, fitted
# on seeds 0-2 of the 7-robot double-integrator swarm (max 2.66), then frozen.
BOUNDEDNESS_C = 3.0


def state_of(p, p_hat=None, u=None, q_dim=None):
    p = BlockVec.from_array(np.atleast_2d(p))
    N = p.layout.num_blocks
    ph = p.copy() if p_hat is None else BlockVec.from_array(np.atleast_2d(p_hat))
    uu = BlockVec.from_array(np.zeros((N, 1))) if u is None else BlockVec.from_array(np.atleast_2d(u))
    zero = BlockVec(p.layout)
    return SimState(step=0, p=p, p_hat=ph, q=BlockVec.from_array(np.zeros((N, q_dim or p.layout.block_dims[0]))),
                    u=uu, f=zero, nu=zero)


def integrator(n=2, B=None, E=None, F=None, L=0.5):
    I = np.eye(n)
    return AgentModel(A=I, B=np.eye(n) if B is None else B, C=I, E=np.zeros((n, n)) if E is None else E,
                      F=np.zeros((n, n)) if F is None else F, Gamma=I, L_o=L * I,
                      K_c=np.zeros((n, n)) if B is None else np.zeros((B.shape[1], n)))


def test_identity_dynamics_leave_state_unchanged():
    m = integrator(B=np.zeros((2, 1)))
    s = state_of([[1.0, -2.0], [3.0, 4.0]])
    nxt = step_dynamics(m, s, BlockVec(s.p.layout), QUIET, seed=1)
    assert np.array_equal(nxt.p.data, s.p.data)
    assert nxt.step == 1


def test_single_integrator_moves_by_input():
    m = integrator()
    s = state_of([[0.0, 0.0]], u=[[1.0, 0.0]])
    assert np.array_equal(step_dynamics(m, s, BlockVec(s.p.layout), QUIET, 0).p.data, [1.0, 0.0])


def test_output_spoof_is_additive():
    m = integrator()
    s = state_of([[2.0, 5.0]], u=[[0.0, 0.0]])
    c = BlockVec.from_array([[0.5, -1.0]])
    assert np.allclose(step_dynamics(m, s, c, QUIET, 0).q.data, [2.5, 4.0])


def test_shape_errors():
    with pytest.raises(ShapeError):
        AgentModel(A=np.eye(2), B=np.eye(2), C=np.eye(3), E=np.eye(2), F=np.eye(2), Gamma=np.eye(2),
                   L_o=np.eye(2), K_c=np.eye(2))
    m = integrator()
    s = state_of([[0.0, 0.0, 0.0]])
    with pytest.raises(ShapeError):
        step_dynamics(m, s, BlockVec(s.p.layout), QUIET, 0)


def test_unstable_estimator_rejected():
    with pytest.raises(StabilityError):
        integrator(L=0.0)


def test_zero_innovation_estimator():
    m = integrator(L=0.3)
    s = state_of([[1.0, 1.0]], p_hat=[[0.0, 2.0]], u=[[0.5, 0.5]])
    s = SimState(0, s.p, s.p_hat, q=s.p_hat.copy(), u=s.u, f=s.f, nu=s.nu)
    assert np.allclose(step_estimator(m, s).data, [0.5, 2.5])


def _estimator_errors(model, e0, steps, spoof=None):
    """Estimation error p_hat - p of one free-running agent with exact outputs."""
    N = 1
    p = np.zeros((N, model.n))
    s = SimState(0, BlockVec.from_array(p), BlockVec.from_array(p + e0), BlockVec.from_array(np.zeros((N, 3))),
                 BlockVec.from_array(np.zeros((N, model.u_dim))), BlockVec.from_array(np.zeros((N, 3))),
                 BlockVec.from_array(np.zeros((N, model.n))))
    f = BlockVec.from_array(np.zeros((N, 3)) if spoof is None else np.atleast_2d(spoof))
    out = []
    for _ in range(steps):
        moved = step_dynamics(model, s, f, QUIET, 0)
        s = SimState(moved.step, moved.p, step_estimator(model, moved), moved.q, moved.u, moved.f, moved.nu)
        out.append(s.p_hat.data - s.p.data)
    return np.array(out)


def test_estimator_error_decays_at_spectral_radius():
    m = double_integrator()
    errs = _estimator_errors(m, np.array([1.0, -0.5, 0.3, 0.2, 0.1, -0.4]), 200)
    norms = np.linalg.norm(errs, axis=1)
    k = np.arange(50, 150)
    slope = np.polyfit(k, np.log(norms[k]), 1)[0]
    assert np.exp(slope) == pytest.approx(m.estimator_radius, rel=1e-3)
    assert m.estimator_radius == pytest.approx(0.8)
    assert norms[-1] < 1e-12


def test_constant_spoof_steady_state_bias():
    m = double_integrator()
    c = np.array([1.0, -0.5, 0.25])
    errs = _estimator_errors(m, np.zeros(6), 500, spoof=c)
    closed = np.linalg.solve(np.eye(6) - m.A + m.L_o @ m.C, m.L_o @ c)
    assert np.allclose(errs[-1], closed, atol=1e-12)
    # a pure position spoof biases position by c and leaves velocity alone
    assert np.allclose(closed, np.r_[c, 0, 0, 0])


def test_consensus_input_examples():
    m = AgentModel(A=[[1.0]], B=[[1.0]], C=[[1.0]], E=[[0.0]], F=[[0.0]], Gamma=[[1.0]], L_o=[[0.5]],
                   K_c=[[-0.5]])
    g = SwarmGraph(2, ((0, 1),))
    assert consensus_input(m, 0, BlockVec.from_array([[0.0], [2.0]]), g, 0) == pytest.approx([1.0])
    same = BlockVec.from_array([[3.0], [3.0]])
    ref = AgentModel(A=[[1.0]], B=[[1.0]], C=[[1.0]], E=[[0.0]], F=[[0.0]], Gamma=[[1.0]], L_o=[[0.5]],
                     K_c=[[-0.5]], u_ref=lambda k: [0.1 * k])
    assert consensus_input(ref, 1, same, g, 7) == pytest.approx([0.7])


def test_consensus_missing_neighbour_is_stale():
    m = double_integrator(dim=1)
    g = path_graph(3)
    with pytest.raises(StaleDataError):
        consensus_input(m, 1, {0: np.zeros(2), 1: np.zeros(2)}, g, 4)


def test_consensus_forms_agree_with_per_robot_input(rng):
    m = double_integrator(dim=2)
    g = path_graph(4)
    ph = BlockVec.from_array(rng.normal(size=(4, 4)))
    stacked = consensus_inputs(m, ph, g, 0).as_array()
    for i in range(4):
        assert np.allclose(stacked[i], consensus_input(m, i, ph, g, 0))


def test_consensus_reaches_common_value(rng):
    m = double_integrator()
    pos = build_formation(ScenarioConfig(n_agents=10), 3)
    g = random_geometric_graph(10, radius_for_mean_degree(pos, 6.0), pos)
    assert m.consensus_radius(g) < 1.0
    p = BlockVec.from_array(rng.normal(scale=3.0, size=(10, 6)))
    s = SimState(0, p, p.copy(), BlockVec.from_array(np.zeros((10, 3))), BlockVec.from_array(np.zeros((10, 3))),
                 BlockVec.from_array(np.zeros((10, 3))), BlockVec(p.layout))
    zero_f = BlockVec.from_array(np.zeros((10, 3)))
    for k in range(500):
        s = SimState(s.step, s.p, s.p_hat, s.q, consensus_inputs(m, s.p_hat, g, k), s.f, s.nu)
        moved = step_dynamics(m, s, zero_f, QUIET, 0)
        s = SimState(moved.step, moved.p, step_estimator(m, moved), moved.q, moved.u, moved.f, moved.nu)
    est = s.p_hat.as_array()
    assert np.max(np.linalg.norm(est - est.mean(axis=0), axis=1)) <= 1e-3


def _world(seed, n=7):
    m = double_integrator()
    pos = build_formation(ScenarioConfig(n_agents=n), seed)
    g = random_geometric_graph(n, radius_for_mean_degree(pos, 4.0), pos)
    full = np.zeros((n, 6))
    full[:, :3] = pos
    noise = NoiseConfig(w_bound=1e-6, v_bound=1e-4)
    return DynamicsWorld(m, g, BlockVec.from_array(full), noise, seed), noise


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_attack_free_error_stays_bounded(seed):
    world, noise = _world(seed)
    zero = BlockVec(BlockLayout.uniform(7, 3))
    bound = BOUNDEDNESS_C * (np.sqrt(noise.w_bound) + np.sqrt(noise.v_bound))
    for _ in range(1000):
        s = world.advance(zero)
        assert np.linalg.norm(s.p.data - s.p_hat.data) <= bound
        assert np.max(np.abs(s.true_error().data)) <= 1e-12


def test_dynamics_spoof_error_tracks_offset():
    world, _ = _world(0)
    c = np.zeros((7, 3))
    c[2] = [1.0, 0.0, 0.0]
    f = BlockVec.from_array(c)
    for _ in range(200):
        s = world.advance(f)
    x = s.true_error().as_array()
    assert np.allclose(x[2, :3], -c[2], atol=1e-6)
    assert np.allclose(np.delete(x, 2, axis=0), 0.0, atol=1e-6)


def test_dynamics_is_deterministic():
    a, _ = _world(4)
    b, _ = _world(4)
    f = BlockVec.from_array(np.full((7, 3), 0.1))
    for _ in range(50):
        sa, sb = a.advance(f), b.advance(f)
    assert np.array_equal(sa.p.data, sb.p.data)
    assert np.array_equal(sa.p_hat.data, sb.p_hat.data)


def test_kinematic_no_attack_no_noise():
    form = BlockVec.from_array(np.arange(12.0).reshape(4, 3))
    s = kinematic_mode_step(form, QUIET, BlockVec(form.layout), seed=0)
    assert np.array_equal(s.p_hat.data, s.p.data)
    assert not np.any(s.true_error().data)


def test_kinematic_injected_error_lands_on_target():
    form = BlockVec.from_array(np.zeros((5, 3)))
    off = np.zeros((5, 3))
    off[3] = [1.0, 0.0, 0.0]
    s = kinematic_mode_step(form, QUIET, BlockVec.from_array(off), seed=0)
    assert np.array_equal(s.true_error().as_array(), off)


@given(seed=st.integers(0, 2**31), k=st.integers(0, 1000),
       targets=st.sets(st.integers(0, 9), min_size=1, max_size=4), law=st.sampled_from(["ball", "box"]))
def test_kinematic_error_within_noise_bound(seed, k, targets, law):
    rng = np.random.default_rng(seed)
    form = BlockVec.from_array(rng.normal(size=(10, 3)))
    off = np.zeros((10, 3))
    off[sorted(targets)] = rng.normal(size=(len(targets), 3)) + 0.1
    s = kinematic_mode_step(form, NoiseConfig(nu_max=0.02, law=law), BlockVec.from_array(off), seed, k)
    assert np.linalg.norm(s.true_error().data - off.reshape(-1)) <= 0.02 + 1e-15
    clean = kinematic_mode_step(form, NoiseConfig(nu_max=0.0), BlockVec.from_array(off), seed, k)
    assert np.count_nonzero(clean.true_error().block_norms()) == len(targets)


def test_spectral_radius_helper():
    assert spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9)
    assert spectral_radius(np.zeros((0, 0))) == 0.0
