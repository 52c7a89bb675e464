"""Ground-truth swarm simulation: linear agents, local estimators, consensus control.

Two modes feed the monitor. The dynamics mode integrates

    p+ = A p + B u + E w,    q = C p + F v + Gamma f,
    p_hat+ = A p_hat + B u + L_o (q - C p_hat),

per agent with a consensus input built from neighbour estimates. The
kinematic mode pins robots to a static formation and draws the estimation
error directly.

Sign convention: the estimate relates to the truth through
``p_hat = p + nu - x`` where ``nu`` is benign estimation error and ``x`` is
the error caused by faults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.signal import place_poles

from .blockvec import BlockLayout, BlockVec, ShapeError
from .measurement import NoiseConfig
from .seeding import sample_ball, sample_bounded, stream
from .topology import SwarmGraph


class StabilityError(ValueError):
    """Estimator or consensus loop is not Schur stable."""


class StaleDataError(RuntimeError):
    """A neighbour estimate needed for the consensus input is missing."""


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


@dataclass(frozen=True, eq=False)
class AgentModel:
    """Per-agent linear model shared by all robots.

    ``K_c`` maps a state difference to an input (``u_dim x n``). ``u_ref``
    returns the reference input for a step; ``None`` means zero.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    F: np.ndarray
    Gamma: np.ndarray
    L_o: np.ndarray
    K_c: np.ndarray
    u_ref: Callable[[int], np.ndarray] | None = None

    def __post_init__(self):
        for name in ("A", "B", "C", "E", "F", "Gamma", "L_o", "K_c"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            object.__setattr__(self, name, arr)
        n = self.A.shape[0]
        q = self.C.shape[0]
        expect = {
            "A": (n, n), "B": (n, self.B.shape[1]), "C": (q, n), "E": (n, self.E.shape[1]),
            "F": (q, self.F.shape[1]), "Gamma": (q, self.Gamma.shape[1]), "L_o": (n, q),
            "K_c": (self.B.shape[1], n),
        }
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        rho = spectral_radius(self.A - self.L_o @ self.C)
        if not rho < 1.0:
            raise StabilityError(f"estimator matrix A - L_o C has spectral radius {rho:.4g} >= 1")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def u_dim(self) -> int:
        return self.B.shape[1]

    @property
    def estimator_radius(self) -> float:
        return spectral_radius(self.A - self.L_o @ self.C)

    def reference(self, k: int) -> np.ndarray:
        if self.u_ref is None:
            return np.zeros(self.u_dim)
        return np.asarray(self.u_ref(k), dtype=float).reshape(self.u_dim)

    def consensus_radius(self, graph: SwarmGraph) -> float:
        """Largest spectral radius of ``A + lambda B K_c`` over Laplacian eigenvalues."""
        lams = np.linalg.eigvalsh(graph.laplacian().astype(float))
        return max(spectral_radius(self.A + lam * self.B @ self.K_c) for lam in lams[1:]) if len(lams) > 1 else 0.0


def double_integrator(dim: int = 3, dt: float = 0.1, estimator_poles=(0.7, 0.8),
                      kp: float = 0.3, kv: float = 0.8) -> AgentModel:
    """Per-axis double integrator with state ``[position, velocity]``.

    The estimator gain places the per-axis poles of ``A - L_o C`` at
    ``estimator_poles``; GNSS measures position and spoofing adds to it.
    """
    A1 = np.array([[1.0, dt], [0.0, 1.0]])
    B1 = np.array([[0.5 * dt * dt], [dt]])
    C1 = np.array([[1.0, 0.0]])
    L1 = place_poles(A1.T, C1.T, np.asarray(estimator_poles, dtype=float)).gain_matrix.T
    I = np.eye(dim)
    perm = _axis_major(dim)
    A = perm @ np.kron(I, A1) @ perm.T
    B = perm @ np.kron(I, B1)
    C = np.kron(I, C1) @ perm.T
    L = perm @ np.kron(I, L1)
    K = -np.hstack([kp * I, kv * I])
    return AgentModel(A=A, B=B, C=C, E=np.eye(2 * dim), F=I, Gamma=I, L_o=L, K_c=K)


def _axis_major(dim: int) -> np.ndarray:
    """Permutation from per-axis ``[x, vx, y, vy, ...]`` to ``[x, y, ..., vx, vy, ...]``."""
    P = np.zeros((2 * dim, 2 * dim))
    for a in range(dim):
        P[a, 2 * a] = 1.0
        P[dim + a, 2 * a + 1] = 1.0
    return P


@dataclass(frozen=True)
class SimState:
    step: int
    p: BlockVec
    p_hat: BlockVec
    q: BlockVec
    u: BlockVec
    f: BlockVec
    nu: BlockVec
    p_hat_nominal: BlockVec | None = field(default=None, repr=False)

    def true_error(self) -> BlockVec:
        """``x = p + nu - p_hat``."""
        return BlockVec(self.p.layout, self.p.data + self.nu.data - self.p_hat.data)


def _rows(v: BlockVec, n: int) -> np.ndarray:
    if not v.layout.is_uniform or (v.layout.num_blocks and v.layout.block_dims[0] != n):
        raise ShapeError(f"expected blocks of size {n}, got {v.layout.block_dims}")
    return v.data.reshape(v.layout.num_blocks, n)


def step_dynamics(model: AgentModel, state: SimState, attack_f: BlockVec, noise: NoiseConfig,
                  seed: int) -> SimState:
    """Advance the true states one step and record this step's outputs.

    Returns a state whose ``p`` is the next true state and whose ``q`` holds
    the outputs measured at the current step; ``p_hat`` is left for
    :func:`step_estimator`.
    """
    N = state.p.layout.num_blocks
    p = _rows(state.p, model.n)
    u = _rows(state.u, model.u_dim)
    f = _rows(attack_f, model.Gamma.shape[1])
    rng_w = stream(seed, "process-noise", state.step)
    rng_v = stream(seed, "output-noise", state.step)
    w = np.stack([sample_ball(rng_w, model.E.shape[1], np.sqrt(noise.w_bound)) for _ in range(N)]) \
        if N else np.zeros((0, model.E.shape[1]))
    v = np.stack([sample_ball(rng_v, model.F.shape[1], np.sqrt(noise.v_bound)) for _ in range(N)]) \
        if N else np.zeros((0, model.F.shape[1]))
    q = p @ model.C.T + v @ model.F.T + f @ model.Gamma.T
    p_next = p @ model.A.T + u @ model.B.T + w @ model.E.T
    return replace(state, step=state.step + 1, p=BlockVec(state.p.layout, p_next.reshape(-1)),
                   q=BlockVec.from_array(q), f=attack_f.copy())


def step_estimator(model: AgentModel, state: SimState, q: BlockVec | None = None,
                   p_hat: BlockVec | None = None) -> BlockVec:
    """``p_hat+ = A p_hat + B u + L_o (q - C p_hat)`` for every agent."""
    ph = _rows(state.p_hat if p_hat is None else p_hat, model.n)
    qq = _rows(state.q if q is None else q, model.C.shape[0])
    u = _rows(state.u, model.u_dim)
    nxt = ph @ model.A.T + u @ model.B.T + (qq - ph @ model.C.T) @ model.L_o.T
    return BlockVec(state.p_hat.layout, nxt.reshape(-1))


def consensus_input(model: AgentModel, i: int, p_hat, g: SwarmGraph, k: int,
                    offsets: BlockVec | None = None) -> np.ndarray:
    """``u[i] = K_c sum_j a_ij (p_hat[i] - p_hat[j]) + u_r(k)``.

    ``p_hat`` is a :class:`BlockVec` or a mapping from robot id to the most
    recent estimate received from that robot. ``offsets`` shifts each robot's
    estimate by its formation slot before differencing.
    """
    def get(j):
        if isinstance(p_hat, Mapping):
            if j not in p_hat:
                raise StaleDataError(f"robot {i} has no estimate from robot {j} at step {k}")
            est = np.asarray(p_hat[j], dtype=float)
        else:
            est = p_hat.block(j)
        return est - offsets.block(j) if offsets is not None else est

    own = get(i)
    acc = np.zeros(model.n)
    for j in g.neighbors(i):
        acc += own - get(j)
    return model.K_c @ acc + model.reference(k)


def consensus_inputs(model: AgentModel, p_hat: BlockVec, g: SwarmGraph, k: int,
                     offsets: BlockVec | None = None) -> BlockVec:
    """All robots' consensus inputs at once (Laplacian form)."""
    ph = _rows(p_hat, model.n)
    if offsets is not None:
        ph = ph - _rows(offsets, model.n)
    lap = g.laplacian().astype(float)
    u = (lap @ ph) @ model.K_c.T + model.reference(k)
    return BlockVec.from_array(u)


def kinematic_mode_step(formation: BlockVec, noise: NoiseConfig, offsets: BlockVec, seed: int,
                        k: int = 0) -> SimState:
    """Static formation with directly sampled estimation error.

    ``p = formation`` and ``p_hat = p + nu - offsets`` where the stacked
    ``nu`` satisfies ``||nu||_2 <= nu_max``.
    """
    if offsets.layout != formation.layout:
        raise ShapeError("offsets must share the formation layout")
    nu = BlockVec(formation.layout, sample_bounded(stream(seed, "estimation-noise", k),
                                                   formation.layout.total_dim, noise.nu_max, noise.law))
    p_hat = BlockVec(formation.layout, formation.data + nu.data - offsets.data)
    zero = BlockVec(formation.layout)
    return SimState(step=k, p=formation.copy(), p_hat=p_hat, q=p_hat.copy(), u=zero, f=offsets.copy(), nu=nu)


class DynamicsWorld:
    """Closed-loop swarm in the dynamics mode.

    Alongside the real estimators it runs fault-free shadow estimators fed
    the same inputs and outputs minus the fault. Their error against the
    truth is the benign ``nu``; the gap between shadow and real estimates is
    the fault-induced error ``x``.

    Parameters
    ----------
    model : AgentModel
    graph : SwarmGraph
        Communication graph used by the consensus law.
    formation : BlockVec
        Per-robot formation slots (full state blocks); robots start there at rest.
    noise : NoiseConfig
    seed : int
    """

    def __init__(self, model: AgentModel, graph: SwarmGraph, formation: BlockVec, noise: NoiseConfig, seed: int):
        self.model = model
        self.graph = graph
        self.offsets = formation.copy()
        self.noise = noise
        self.seed = seed
        N = graph.num_vertices
        layout = BlockLayout.uniform(N, model.n)
        zero_u = BlockVec(BlockLayout.uniform(N, model.u_dim))
        zero_f = BlockVec(BlockLayout.uniform(N, model.Gamma.shape[1]))
        self.state = SimState(step=0, p=formation.copy(), p_hat=formation.copy(),
                              q=BlockVec(BlockLayout.uniform(N, model.C.shape[0])), u=zero_u,
                              f=zero_f, nu=BlockVec(layout), p_hat_nominal=formation.copy())

    def observe(self) -> SimState:
        """State at the current step, before it is advanced."""
        return self.state

    def advance(self, attack_f: BlockVec) -> SimState:
        """Apply ``attack_f`` to this step's outputs and move to the next step."""
        model, s = self.model, self.state
        u = consensus_inputs(model, s.p_hat, self.graph, s.step, self.offsets)
        s = replace(s, u=u)
        moved = step_dynamics(model, s, attack_f, self.noise, self.seed)
        p_hat = step_estimator(model, moved)
        fault_out = BlockVec.from_array(_rows(attack_f, model.Gamma.shape[1]) @ model.Gamma.T)
        clean_q = BlockVec(moved.q.layout, moved.q.data - fault_out.data)
        nominal = step_estimator(model, moved, q=clean_q, p_hat=s.p_hat_nominal)
        nu = BlockVec(p_hat.layout, nominal.data - moved.p.data)
        self.state = replace(moved, p_hat=p_hat, p_hat_nominal=nominal, nu=nu)
        return self.state
