"""One seeded trial: world, attack, range emulation, distributed solver, monitor."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackSchedule, active_faults, random_schedule
from .blockvec import BlockLayout, BlockVec
from .config import ScenarioConfig
from .measurement import RangeModel, emulate_ranges
from .monitor import Confirmation, IntegrityReport, evaluate
from .runtime import SwarmRuntime
from .seeding import stream
from .simworld import DynamicsWorld, double_integrator, kinematic_mode_step
from .topology import (
    SwarmGraph,
    TopologySchedule,
    complete_graph,
    radius_for_mean_degree,
    random_geometric_graph,
)


class TrialError(RuntimeError):
    """A module error raised inside a trial, tagged with where it happened."""

    def __init__(self, seed: int, step: int, exc: Exception):
        super().__init__(f"trial seed {seed} failed at step {step}: {type(exc).__name__}: {exc}")
        self.seed = seed
        self.step = step
        self.cause = exc


def build_formation(cfg: ScenarioConfig, seed: int) -> np.ndarray:
    """``(n_agents, dim)`` formation positions for a trial."""
    spec, n, d = cfg.formation, cfg.n_agents, cfg.dim
    if spec.kind == "explicit":
        return np.array(spec.positions, dtype=float)
    rng = stream(seed, "formation")
    if spec.kind == "uniform":
        return rng.random((n, d)) * spec.side
    cols = int(np.ceil(np.sqrt(n)))
    lattice = np.array([(k % cols, k // cols) for k in range(n)], dtype=float) * spec.spacing
    pos = np.zeros((n, d))
    planar = min(d, 2)
    pos[:, :planar] = lattice[:, :planar] + rng.uniform(-spec.jitter, spec.jitter, (n, planar))
    if d == 3:
        pos[:, 2] = spec.altitude + rng.uniform(-spec.altitude_jitter, spec.altitude_jitter, n)
    return pos


def build_attack(cfg: ScenarioConfig, seed: int) -> AttackSchedule:
    spec = cfg.attack
    if spec.schedule is not None:
        return spec.schedule
    windows, counts = [], []
    for (start, end), c in zip(spec.windows, spec.counts):
        end = cfg.steps if end is None else end
        if c > 0 and start < end:
            windows.append((start, end))
            counts.append(c)
    return random_schedule(cfg.n_agents, windows, counts, spec.magnitude, cfg.dim, seed)


def build_topology(cfg: ScenarioConfig, positions: np.ndarray, attack: AttackSchedule) -> TopologySchedule:
    spec, n = cfg.topology, cfg.n_agents
    if spec.kind == "explicit":
        return TopologySchedule.static(SwarmGraph(n, spec.edges))
    if spec.kind == "complete":
        return TopologySchedule.static(complete_graph(n))
    radius = spec.radius or radius_for_mean_degree(positions, spec.mean_degree)
    base = random_geometric_graph(n, radius, positions)
    if not spec.rebuild_on_attack:
        return TopologySchedule.static(base)
    layout = BlockLayout.uniform(n, cfg.dim)
    phases = [(0, base)]
    for b in attack.boundaries():
        if 0 < b < max(cfg.steps, 1):
            _, f = active_faults(attack, b, layout)
            # robots link up according to where they believe they are
            g = random_geometric_graph(n, radius, positions - f.as_array())
            phases.append((b, g))
    return TopologySchedule(tuple(phases))


@dataclass
class TrialTrace:
    """Everything recorded during one trial.

    Array series have one row per executed step; a diverged trial stops early
    and its remaining rows are NaN.
    """

    config: ScenarioConfig
    seed: int
    attack: AttackSchedule
    topology: TopologySchedule
    formation: np.ndarray
    x_true: np.ndarray
    recon: np.ndarray
    reports: list[IntegrityReport] = field(default_factory=list)
    confirmed: list[frozenset] = field(default_factory=list)
    confirmed_alarm: list[bool] = field(default_factory=list)
    active: list[frozenset] = field(default_factory=list)
    dual_norm: np.ndarray | None = None
    diverged: bool = False
    diverged_step: int | None = None
    solver_seconds: float = 0.0
    outer_rounds: int = 0
    messages: int = 0

    @property
    def steps(self) -> int:
        return self.x_true.shape[0]

    @property
    def divergence_reference(self) -> float:
        ref = self.attack.max_offset_norm()
        return ref if ref > 0 else 1.0


def run_trial(cfg: ScenarioConfig, trial: int = 0, threads: int = 1) -> TrialTrace:
    """Simulate ``cfg.steps`` monitoring steps with seed ``cfg.master_seed + trial``."""
    seed = cfg.master_seed + trial
    n, d, steps = cfg.n_agents, cfg.dim, cfg.steps
    nx = cfg.state_dim
    pos_slice = slice(0, d)
    formation = build_formation(cfg, seed)
    attack = build_attack(cfg, seed)
    attack.validate_for(n)
    topo = build_topology(cfg, formation, attack)
    layout = BlockLayout.uniform(n, nx)
    pos_layout = BlockLayout.uniform(n, d)
    eps = cfg.resolved_epsilon

    trace = TrialTrace(cfg, seed, attack, topo, formation,
                       x_true=np.full((steps, n, nx), np.nan), recon=np.full((steps, n, nx), np.nan),
                       dual_norm=np.full(steps, np.nan))
    if steps == 0:
        return trace

    full_formation = np.zeros((n, nx))
    full_formation[:, pos_slice] = formation
    form_vec = BlockVec(layout, full_formation.reshape(-1))
    world = None
    if cfg.mode == "dynamics":
        dyn = cfg.dynamics
        model = double_integrator(d, dyn.dt, dyn.estimator_poles, dyn.kp, dyn.kv)
        world = DynamicsWorld(model, topo.at(0), form_vec, cfg.noise, seed)
    models: dict[int, RangeModel] = {}
    confirm = Confirmation(cfg.confirm_k)
    limit = cfg.divergence_factor * trace.divergence_reference
    rounds = cfg.solver.scp_rounds_per_step
    k = 0
    with SwarmRuntime(topo, layout, pos_slice, threads=threads) as rt:
        try:
            for k in range(steps):
                targets, f = active_faults(attack, k, pos_layout)
                if world is None:
                    offsets = np.zeros((n, nx))
                    offsets[:, pos_slice] = f.as_array()
                    state = kinematic_mode_step(form_vec, cfg.noise, BlockVec(layout, offsets.reshape(-1)), seed, k)
                else:
                    world.graph = topo.at(k)
                    state = world.observe()
                graph = topo.at(k)
                model = models.get(id(graph))
                if model is None:
                    model = models[id(graph)] = RangeModel(graph, layout, pos_slice)
                y_hat = emulate_ranges(model, state.p, cfg.noise, seed, k)

                rt.set_step(k)
                t0 = time.perf_counter()
                for _ in range(rounds):
                    rt.advance(state.p_hat, y_hat, cfg.solver)
                trace.solver_seconds += time.perf_counter() - t0
                trace.outer_rounds += rounds

                recon = rt.reconstruction()
                x_true = state.true_error().as_array()
                trace.x_true[k] = x_true
                trace.recon[k] = recon
                trace.dual_norm[k] = rt.max_dual_norm()
                trace.active.append(targets)
                err = np.linalg.norm(x_true - recon, axis=1).mean()
                if not np.isfinite(err) or err > limit:
                    trace.diverged, trace.diverged_step = True, k
                    break
                report = evaluate(recon, eps, k)
                trace.reports.append(report)
                conf, alarm = confirm.update(report)
                trace.confirmed.append(conf)
                trace.confirmed_alarm.append(alarm)
                if world is not None:
                    world.advance(f)
        except Exception as exc:
            raise TrialError(seed, k, exc) from exc
        trace.messages = rt.messages_delivered
    return trace
