"""Experiment harness: metrics, a single-process reference solver, Monte Carlo, export."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .blockvec import BlockVec, ShapeError
from .config import ScenarioConfig
from .measurement import GUARD_DISTANCE, unit_directions
from .solver import SolverConfig, SolverInvariantError, solve_norm_prox_eig
from .topology import SwarmGraph
from .trial import TrialTrace, run_trial


def reconstruction_error(x_true: BlockVec, x_recon: BlockVec) -> np.ndarray:
    """Per-robot ``||x[i] - recon[i]||_2``."""
    if x_true.layout != x_recon.layout:
        raise ShapeError("true and reconstructed errors must share a layout")
    return (x_true - x_recon).block_norms()


def centralized_oracle(p_hat: BlockVec, y_hat: BlockVec, graph: SwarmGraph, cfg: SolverConfig,
                       rounds: int = 1, pos_slice: slice = slice(0, 3),
                       guard: float = GUARD_DISTANCE) -> BlockVec:
    """Run the SCP/ADMM iterations in one process with plain arrays.

    Each local problem is assembled directly from the stacked edge data: the
    x-step forms ``Q`` and the linear term explicitly, the copy-step solves
    its ``n x n`` system with a dense solver. Returns the accumulated error
    after ``rounds`` outer rounds with the same ``p_hat``/``y_hat``.
    """
    P = p_hat.as_array()
    N, n = P.shape
    y = y_hat.data
    E = np.asarray(graph.edges, dtype=int).reshape(-1, 2)
    rho = cfg.rho
    # arcs: (owner i, other j, edge l, sign of R[l, i])
    arcs = [(int(a), int(b), l, 1.0) for l, (a, b) in enumerate(E)] + \
           [(int(b), int(a), l, -1.0) for l, (a, b) in enumerate(E)]
    arcs.sort(key=lambda t: (t[0], t[1]))
    A = len(arcs)
    owner = np.array([t[0] for t in arcs])
    other = np.array([t[1] for t in arcs])
    edge = np.array([t[2] for t in arcs])
    sign = np.array([t[3] for t in arcs])
    reverse = np.array([arcs.index(next(t for t in arcs if t[0] == j and t[1] == i)) for i, j, _, _ in arcs])
    deg = np.bincount(owner, minlength=N)

    xbar = np.zeros((N, n))
    lam = np.zeros(A)          # lambda_i^(l), one per arc
    mu = np.zeros((A, n))      # mu_i^(j), one per arc
    for _ in range(rounds):
        X = P + xbar
        u = np.zeros((len(E), n))
        u[:, pos_slice] = unit_directions(X[:, pos_slice], E, guard)
        z = y - np.linalg.norm(X[E[:, 0], pos_slice] - X[E[:, 1], pos_slice], axis=1)
        r_self = sign[:, None] * u[edge]           # R[l, owner]
        zr = z[edge]
        xh = np.zeros((N, n))
        w = np.zeros((A, n))                       # owner's copy of other's step
        flagged = np.zeros(N, dtype=bool)
        for _ in range(cfg.n_admm):
            w_in = w[reverse]                      # other's copy of owner's step
            for i in range(N):
                rows = np.flatnonzero(owner == i)
                R = r_self[rows]
                Q = rho * (R.T @ R + deg[i] * np.eye(n))
                rw = np.einsum("ad,ad->a", -R, w[rows])
                h = R.T @ (rho * (rw - zr[rows]) + lam[rows]) + (mu[rows] - rho * w_in[rows]).sum(axis=0)
                q, V = np.linalg.eigh(Q)
                if not q[0] > 0:
                    raise SolverInvariantError(f"robot {i}: quadratic term is not positive definite")
                ui = solve_norm_prox_eig(q, V, Q @ xbar[i] - h, cfg.prox_tol, cfg.max_prox_iter)
                xh[i] = ui - xbar[i]
            mu_in = mu[reverse]
            for a in range(A):
                r_nb = -r_self[a]
                resid = r_self[a] @ xh[owner[a]] - zr[a]
                M = rho * (np.outer(r_nb, r_nb) + np.eye(n))
                rhs = -(rho * resid + lam[a]) * r_nb + rho * xh[other[a]] + mu_in[a]
                w[a] = np.linalg.solve(M, rhs)
            c = np.einsum("ad,ad->a", r_self, xh[owner]) - np.einsum("ad,ad->a", r_self, w) - zr
            lam = lam + rho * c
            mu = mu + rho * (xh[owner] - w[reverse])
            big = (np.abs(lam) > cfg.dual_threshold) | (np.linalg.norm(mu, axis=1) > cfg.dual_threshold)
            flagged[owner[big]] = True
        xbar = xbar + xh
        reset = np.ones(N, dtype=bool) if not cfg.warm_start else (flagged if cfg.cold_start else np.zeros(N, bool))
        lam[reset[owner]] = 0.0
        mu[reset[owner]] = 0.0
    return BlockVec(p_hat.layout, xbar.reshape(-1))


@dataclass
class TrialMetrics:
    """Per-step summaries of one trial.

    ``e`` holds per-robot reconstruction errors; steps after a divergence
    are NaN. ``latency`` maps each attacked robot to the number of steps from
    the start of its first attack phase to its first confirmed detection
    (``None`` when never confirmed).
    """

    seed: int
    e: np.ndarray
    mean_rmse: np.ndarray
    std_rmse: np.ndarray
    chi: np.ndarray
    chi_i: np.ndarray
    n_detected: np.ndarray
    n_confirmed: np.ndarray
    swarm_alarms: int
    confirmed_alarms: int
    latency: dict
    diverged: bool
    diverged_step: int | None
    final_detected: frozenset
    final_targets: frozenset
    attack: dict = field(repr=False, default_factory=dict)
    solver_seconds: float = 0.0
    outer_rounds: int = 0

    @property
    def steps(self) -> int:
        return len(self.mean_rmse)

    @property
    def final_mean_rmse(self) -> float:
        return float(self.mean_rmse[-1]) if self.steps and not self.diverged else math.inf

    @classmethod
    def from_trace(cls, trace: TrialTrace) -> "TrialMetrics":
        T = trace.steps
        e = np.linalg.norm(trace.x_true - trace.recon, axis=2)
        if trace.diverged:
            e[trace.diverged_step:] = np.nan
        chi_i = np.full(e.shape, np.nan)
        n_det = np.zeros(T, dtype=int)
        n_conf = np.zeros(T, dtype=int)
        for r, conf in zip(trace.reports, trace.confirmed):
            chi_i[r.step] = r.chi_i
            n_det[r.step] = len(r.detected)
            n_conf[r.step] = len(conf)
        latency = {}
        for t in sorted(trace.attack.targets):
            start = min(p.start for p in trace.attack.phases if t in p.targets)
            hit = next((k for k, conf in enumerate(trace.confirmed) if k >= start and t in conf), None)
            latency[t] = None if hit is None else hit - start
        with np.errstate(invalid="ignore"):
            mean = e.mean(axis=1) if T else np.zeros(0)
            std = e.std(axis=1) if T else np.zeros(0)
        return cls(
            seed=trace.seed, e=e, mean_rmse=mean, std_rmse=std,
            chi=chi_i.sum(axis=1) if T else np.zeros(0), chi_i=chi_i,
            n_detected=n_det, n_confirmed=n_conf,
            swarm_alarms=sum(r.swarm_alarm for r in trace.reports),
            confirmed_alarms=sum(trace.confirmed_alarm), latency=latency,
            diverged=trace.diverged, diverged_step=trace.diverged_step,
            final_detected=trace.confirmed[-1] if trace.confirmed and not trace.diverged else frozenset(),
            final_targets=trace.active[-1] if trace.active else frozenset(),
            attack=trace.attack.to_dict(), solver_seconds=trace.solver_seconds,
            outer_rounds=trace.outer_rounds)


def precision_recall(trials) -> tuple[float, float]:
    """Pooled precision and recall of final confirmed detections against final targets.

    An empty denominator counts as perfect (no false alarms, nothing to find).
    """
    tp = fp = fn = 0
    for m in trials:
        tp += len(m.final_detected & m.final_targets)
        fp += len(m.final_detected - m.final_targets)
        fn += len(m.final_targets - m.final_detected)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return precision, recall


@dataclass
class MonteCarloResult:
    config: ScenarioConfig
    trials: list[TrialMetrics]

    @property
    def seeds(self) -> list[int]:
        return [m.seed for m in self.trials]

    @property
    def converged(self) -> list[TrialMetrics]:
        return [m for m in self.trials if not m.diverged]

    @property
    def divergence_rate(self) -> float:
        return sum(m.diverged for m in self.trials) / len(self.trials)

    def mean_curve(self) -> np.ndarray:
        """Mean over converged trials of the per-trial mean RMSE, per step."""
        ok = self.converged
        if not ok:
            return np.full(self.config.steps, np.nan)
        return np.mean([m.mean_rmse for m in ok], axis=0)

    def std_curve(self) -> np.ndarray:
        ok = self.converged
        if not ok:
            return np.full(self.config.steps, np.nan)
        return np.std([m.mean_rmse for m in ok], axis=0)

    def mean_series(self, name: str) -> np.ndarray:
        ok = self.converged
        if not ok:
            return np.full(self.config.steps, np.nan)
        return np.mean([getattr(m, name) for m in ok], axis=0)

    @property
    def final_mean_rmse(self) -> float:
        """Mean final RMSE over converged trials (``inf`` when all diverged)."""
        ok = self.converged
        return float(np.mean([m.final_mean_rmse for m in ok])) if ok else math.inf

    def precision_recall(self) -> tuple[float, float]:
        return precision_recall(self.trials)

    def summary(self) -> dict:
        p, r = self.precision_recall()
        return {"scenario": self.config.name, "trials": len(self.trials),
                "final_mean_rmse": self.final_mean_rmse, "divergence_rate": self.divergence_rate,
                "precision": p, "recall": r,
                "swarm_alarms": sum(m.swarm_alarms for m in self.trials),
                "confirmed_alarms": sum(m.confirmed_alarms for m in self.trials)}


def monte_carlo(cfg: ScenarioConfig, trials: int | None = None, workers: int = 1) -> MonteCarloResult:
    """Run trials with seeds ``master_seed + t`` and collect their metrics in trial order."""
    count = cfg.trials if trials is None else trials
    if count < 1:
        raise ValueError("need at least one trial")

    def one(t):
        return TrialMetrics.from_trace(run_trial(cfg, t))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            metrics = list(pool.map(one, range(count)))
    else:
        metrics = [one(t) for t in range(count)]
    return MonteCarloResult(cfg, metrics)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


TRIAL_COLUMNS = ["step", "mean_rmse", "std_rmse", "chi", "n_detected"]


def trial_rows(m: TrialMetrics, per_robot: bool = False) -> tuple[list[str], list[list[str]]]:
    header = list(TRIAL_COLUMNS)
    if per_robot:
        header += [f"e_{i}" for i in range(m.e.shape[1])] + [f"chi_{i}" for i in range(m.e.shape[1])]
    rows = []
    for k in range(m.steps):
        row = [k, m.mean_rmse[k], m.std_rmse[k], m.chi[k], m.n_detected[k]]
        if per_robot:
            row += list(m.e[k]) + list(m.chi_i[k])
        rows.append([_fmt(v) for v in row])
    return header, rows


def monte_carlo_rows(res: MonteCarloResult) -> tuple[list[str], list[list[str]]]:
    header = ["step", "mean_rmse", "std_rmse_trials", "chi", "n_detected", "n_converged"]
    mean, std = res.mean_curve(), res.std_curve()
    chi, det = res.mean_series("chi"), res.mean_series("n_detected")
    rows = [[_fmt(v) for v in (k, mean[k], std[k], chi[k], det[k], len(res.converged))]
            for k in range(res.config.steps)]
    return header, rows


def write_csv(path, header, rows):
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def write_json(path, data: dict):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def metadata(cfg: ScenarioConfig, seeds, extra: dict | None = None) -> dict:
    out = {"config": cfg.to_dict(), "seeds": list(seeds), "version": __version__}
    out.update(extra or {})
    return out


def export(metrics, path, per_robot: bool = False) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.json`` for a trial or Monte Carlo result."""
    base = Path(path)
    csv_path, json_path = base.parent / f"{base.name}.csv", base.parent / f"{base.name}.json"
    if isinstance(metrics, MonteCarloResult):
        header, rows = monte_carlo_rows(metrics)
        meta = metadata(metrics.config, metrics.seeds, {"summary": metrics.summary()})
    else:
        header, rows = trial_rows(metrics, per_robot)
        meta = {"seed": metrics.seed, "attack": metrics.attack, "diverged": metrics.diverged,
                "diverged_step": metrics.diverged_step,
                "final_detected": sorted(metrics.final_detected),
                "latency": {str(k): v for k, v in metrics.latency.items()}}
    write_csv(csv_path, header, rows)
    write_json(json_path, meta)
    return csv_path, json_path
