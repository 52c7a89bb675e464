"""Acceptance suite: one test per criterion, each with its own time budget.

Every test gathers all sub-check failures and reports them together, so a
single failing line names everything that missed its threshold.
"""

import math
import time

import numpy as np
import pytest
from numba import njit

from rangemon.blockvec import BlockLayout, BlockVec, norm_2q
from rangemon.cli import main
from rangemon.config import AttackSpec, ScenarioConfig
from rangemon.harness import centralized_oracle, monte_carlo, precision_recall
from rangemon.measurement import NoiseConfig, RangeModel, emulate_ranges, jacobian, phi
from rangemon.runtime import SwarmRuntime
from rangemon.scenarios import scenario, two_phase
from rangemon.simworld import kinematic_mode_step
from rangemon.solver import SolverConfig, prox_residual, solve_norm_prox
from rangemon.topology import complete_graph, radius_for_mean_degree, random_geometric_graph
from rangemon.trial import run_trial

pytestmark = pytest.mark.acceptance


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds
        self.t0 = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0

    def check(self, failures):
        if self.elapsed > self.seconds:
            failures.append(f"took {self.elapsed:.1f} s, limit {self.seconds} s")


def report(failures):
    assert not failures, "\n".join(failures)


def test_criterion_1_block_norm_properties():
    budget = Budget(5.0)
    rng = np.random.default_rng(1)
    failures = []
    qs = (1, 2, 3, math.inf)
    for t in range(10_000):
        nb = int(rng.integers(1, 8))
        dims = tuple(int(d) for d in rng.integers(1, 5, size=nb))
        lay = BlockLayout(dims)
        x = BlockVec(lay, rng.normal(size=lay.total_dim) * rng.exponential())
        y = BlockVec(lay, rng.normal(size=lay.total_dim))
        alpha = float(rng.normal() * 3)
        nx = [norm_2q(x, q) for q in qs]
        tol = 1e-12 * (1 + nx[0])
        if any(a < b - tol for a, b in zip(nx, nx[1:])):
            failures.append(f"#{t}: ordering violated {nx}")
        for q, n in zip(qs, nx):
            s = norm_2q(x + y, q)
            if s > n + norm_2q(y, q) + 1e-12 * (1 + s):
                failures.append(f"#{t}: triangle q={q}")
            if abs(norm_2q(x * alpha, q) - abs(alpha) * n) > 1e-12 * (1 + abs(alpha) * n):
                failures.append(f"#{t}: homogeneity q={q}")
        if len(failures) > 20:
            break
    budget.check(failures)
    report(failures)


def test_criterion_2_jacobian_matches_central_differences():
    budget = Budget(5.0)
    rng = np.random.default_rng(2)
    g = complete_graph(5)
    lay = BlockLayout.uniform(5, 3)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        p = rng.uniform(-5, 5, size=15)
        model = RangeModel(g, lay, slice(0, 3))
        J = jacobian(model, BlockVec(lay, p)).toarray()
        fd = np.empty_like(J)
        for c in range(15):
            e = np.zeros(15)
            e[c] = h
            fd[:, c] = (phi(model, BlockVec(lay, p + e)).data - phi(model, BlockVec(lay, p - e)).data) / (2 * h)
        worst = max(worst, np.linalg.norm(J - fd) / np.linalg.norm(J))
    failures = [] if worst <= 1e-6 else [f"worst relative error {worst:.3e} > 1e-6"]
    budget.check(failures)
    report(failures)


@njit(cache=True)
def _proximal_gradient(Q, g, x_bar, iters):
    """Minimise ||x + x_bar|| + (x + x_bar)'Q(x + x_bar)/2 - g'(x + x_bar) over x."""
    n = g.shape[0]
    step = 1.0 / np.linalg.eigvalsh(Q)[-1]
    x = np.zeros(n)
    v = np.empty(n)
    for _ in range(iters):
        nv2 = 0.0
        for a in range(n):
            grad = -g[a]
            for b in range(n):
                grad += Q[a, b] * (x[b] + x_bar[b])
            v[a] = x[a] + x_bar[a] - step * grad
            nv2 += v[a] * v[a]
        nv = np.sqrt(nv2)
        shrink = max(0.0, 1.0 - step / nv) if nv > 0 else 0.0
        for a in range(n):
            x[a] = shrink * v[a] - x_bar[a]
    return x


def test_criterion_3_x_update_matches_proximal_gradient():
    budget = Budget(60.0)
    rng = np.random.default_rng(3)
    failures = []
    for t in range(200):
        n = (2, 3, 6)[t % 3]
        U, _ = np.linalg.qr(rng.normal(size=(n, n)))
        Q = U @ np.diag(rng.uniform(0.1, 10.0, size=n)) @ U.T
        Q = 0.5 * (Q + Q.T)
        g = rng.normal(size=n)
        g *= (rng.uniform(0.2, 0.95) if t % 4 == 0 else rng.uniform(1.2, 20.0)) / np.linalg.norm(g)
        x_bar = rng.normal(size=n)
        x_hat = solve_norm_prox(Q, g) - x_bar
        ref = _proximal_gradient(Q, g, x_bar, 1_000_000)
        gap = float(np.linalg.norm(x_hat - ref))
        cert = prox_residual(Q, g, x_hat + x_bar)
        if gap > 1e-6:
            failures.append(f"#{t} n={n}: |x - oracle| = {gap:.2e}")
        if cert > 1e-9:
            failures.append(f"#{t} n={n}: certificate residual {cert:.2e}")
    budget.check(failures)
    report(failures)


def test_criterion_4_distributed_equals_centralized():
    budget = Budget(10.0)
    rng = np.random.default_rng(4)
    n = 6
    pos = rng.uniform(0, 6, size=(n, 3))
    g = random_geometric_graph(n, radius_for_mean_degree(pos, 3.0), pos)
    lay = BlockLayout.uniform(n, 3)
    offsets = np.zeros((n, 3))
    offsets[rng.choice(n, 2, replace=False)] = rng.normal(size=(2, 3))
    noise = NoiseConfig(omega_max=0.02, nu_max=0.02)
    state = kinematic_mode_step(BlockVec(lay, pos.reshape(-1)), noise, BlockVec(lay, offsets.reshape(-1)), 4)
    y = emulate_ranges(RangeModel(g, lay, slice(0, 3)), state.p, noise, 4, 0)
    cfg = SolverConfig()
    with SwarmRuntime(g, lay, slice(0, 3)) as rt:
        for _ in range(50):
            got = rt.outer_round(state.p_hat, y, cfg)
    ref = centralized_oracle(state.p_hat, y, g, cfg, rounds=50)
    gap = float(np.max(np.abs(got.data - ref.data)))
    failures = [] if gap <= 1e-9 else [f"max component gap {gap:.2e} > 1e-9"]
    budget.check(failures)
    report(failures)


def test_criterion_5_noise_study():
    budget = Budget(300.0)
    failures = []
    for name in ("noise-i", "noise-ii", "noise-iii", "noise-iv"):
        [(_, cfg)] = scenario(name)
        res = monte_carlo(cfg.with_(trials=20))
        bound = 3 * (cfg.noise.nu_max + cfg.noise.omega_max)
        summary = f"{name}: final mean RMSE {res.final_mean_rmse:.4f}, divergence rate {res.divergence_rate:.2f}"
        if name == "noise-iv":
            if res.divergence_rate < 0.5:
                failures.append(f"{summary}; expected divergence rate >= 0.5")
        elif res.divergence_rate != 0 or not res.final_mean_rmse <= bound:
            failures.append(f"{summary}; expected RMSE <= {bound:.2f} and no divergence")
    budget.check(failures)
    report(failures)


def test_criterion_6_cold_start_study():
    budget = Budget(300.0)
    failures = []
    results = {}
    for rho in (0.25, 0.75):
        for mode in ("warm", "cold"):
            cfg = two_phase(rho, mode)
            res = results[rho, mode] = monte_carlo(cfg.with_(trials=20))
            bound = 3 * (cfg.noise.nu_max + cfg.noise.omega_max)
            summary = (f"rho={rho} {mode}: final mean RMSE {res.final_mean_rmse:.4f}, "
                       f"divergence rate {res.divergence_rate:.2f}")
            if (rho, mode) == (0.75, "warm"):
                if res.divergence_rate < 0.5:
                    failures.append(f"{summary}; expected divergence rate >= 0.5")
            elif res.divergence_rate != 0 or not res.final_mean_rmse <= bound:
                failures.append(f"{summary}; expected convergence with RMSE <= {bound:.2f}")
    cold, warm = results[0.75, "cold"].final_mean_rmse, results[0.75, "warm"].final_mean_rmse
    if not cold <= warm:
        failures.append(f"rho=0.75: cold {cold:.4f} > warm {warm:.4f}")
    budget.check(failures)
    report(failures)


def test_criterion_7_detection_and_no_false_alarms():
    budget = Budget(180.0)
    failures = []
    [(_, cfg)] = scenario("noise-i")
    cfg = cfg.with_(trials=20, confirm_k=3)
    eps = 5 * (cfg.noise.nu_max + cfg.noise.omega_max)
    cfg = cfg.with_(epsilon=eps)
    res = monte_carlo(cfg)
    p, r = precision_recall(res.trials)
    if (p, r) != (1.0, 1.0):
        failures.append(f"precision {p:.3f}, recall {r:.3f}")
    wrong = [m.seed for m in res.trials if len(m.final_targets) != 6 or m.final_detected != m.final_targets]
    if wrong:
        failures.append(f"detected set differs from the injected set in trials {wrong}")
    quiet = cfg.with_(steps=200, trials=100, attack=AttackSpec.none())
    alarms = confirmed = 0
    for t in range(100):
        trace = run_trial(quiet, t)
        alarms += sum(rep.swarm_alarm for rep in trace.reports)
        confirmed += sum(trace.confirmed_alarm)
        if trace.diverged:
            failures.append(f"attack-free trial {t} diverged")
    if alarms or confirmed:
        failures.append(f"attack-free runs raised {alarms} swarm alarms ({confirmed} confirmed)")
    budget.check(failures)
    report(failures)


def test_criterion_8_thread_count_does_not_change_bytes(tmp_path, capsys):
    outs = []
    for threads in ("1", "8"):
        out = tmp_path / f"t{threads}"
        assert main(["run", "--scenario", "two-phase", "--seed", "42", "--threads", threads,
                     "--out-dir", str(out)]) == 0
        outs.append(out)
    capsys.readouterr()
    a, b = outs
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    failures = [name for name in names if (a / name).read_bytes() != (b / name).read_bytes()]
    assert any(name.endswith(".csv") for name in names)
    report([f"{name} differs between 1 and 8 threads" for name in failures])


def test_criterion_9_per_robot_cost_independent_of_swarm_size():
    budget = Budget(120.0)
    cost = {}
    for n in (20, 100):
        cfg = ScenarioConfig(n_agents=n, steps=100, attack=AttackSpec(counts=(max(1, n // 10),)))
        run_trial(cfg.with_(steps=2), 0)
        trace = run_trial(cfg, 0)
        cost[n] = trace.solver_seconds / (trace.outer_rounds * n)
    ratio = max(cost.values()) / min(cost.values())
    failures = [] if ratio <= 2.0 else [f"per-robot round cost ratio {ratio:.2f} > 2 ({cost})"]
    budget.check(failures)
    report(failures)
