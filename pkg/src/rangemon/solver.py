"""Per-robot SCP/ADMM arithmetic for sparse error reconstruction.

Each :class:`SolverNode` owns the variables of one robot ``i``:

* ``x_bar`` and ``x_bar_nb``: accumulated error of ``i`` and its copies of the
  neighbours' accumulated errors,
* ``x_hat``: the local primal step for robot ``i``,
* ``w_out[k]``: robot ``i``'s copy of neighbour ``k``'s step (solved here),
* ``w_in[k]``: neighbour ``k``'s copy of robot ``i``'s step (received),
* ``lam[k]``/``mu[k]``: duals of the range and consistency constraints.

Per-neighbour arrays are indexed by the position of the neighbour in the
ascending neighbour list; in a simple graph each neighbour owns exactly one
incident edge, so edge quantities share that index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .measurement import GUARD_DISTANCE, DegenerateGeometryError


class SolverInvariantError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 0.25
    n_admm: int = 10
    scp_rounds_per_step: int = 1
    epsilon: float | None = None
    dual_threshold: float = 10.0
    warm_start: bool = True
    cold_start: bool = True
    prox_tol: float = 1e-10
    max_prox_iter: int = 100
    dual_eval: str = "latest"

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.n_admm < 1:
            raise ValueError("n_admm must be >= 1")
        if self.scp_rounds_per_step < 1:
            raise ValueError("scp_rounds_per_step must be >= 1")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.dual_threshold > 0:
            raise ValueError("dual_threshold must be > 0")
        if not self.prox_tol > 0:
            raise ValueError("prox_tol must be > 0")
        if self.max_prox_iter < 1:
            raise ValueError("max_prox_iter must be >= 1")
        if self.dual_eval != "latest":
            raise ValueError("only dual_eval='latest' is supported")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


def solve_norm_prox_eig(q: np.ndarray, V: np.ndarray, g: np.ndarray,
                        tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Minimise ``||u|| + u'Qu/2 - g'u`` given ``Q = V diag(q) V'``, ``q > 0``.

    The minimiser is zero when ``||g|| <= 1``. Otherwise it is
    ``u(r) = (Q + I/r)^{-1} g`` at the unique ``r > 0`` with ``||u(r)|| = r``,
    found by Newton's method on ``1/phi(r) - 1`` where
    ``phi(r) = ||u(r)||/r``, with bisection as a safeguard.
    """
    gnorm = math.sqrt(float(g @ g))
    if gnorm <= 1.0:
        return np.zeros_like(g)
    gh = V.T @ g
    gh2 = (gh * gh).tolist()
    qs = q.tolist()
    lo = (gnorm - 1.0) / max(qs)
    hi = (gnorm - 1.0) / min(qs)
    r = lo
    for _ in range(max_iter):
        phi2 = 0.0
        dsum = 0.0
        for a, qk in zip(gh2, qs):
            s = qk * r + 1.0
            t = a / (s * s)
            phi2 += t
            dsum += t * qk / s
        phi = math.sqrt(phi2)
        if abs(phi - 1.0) <= tol:
            break
        f = 1.0 / phi - 1.0
        if f < 0.0:
            lo = r
        else:
            hi = r
        step = r - f * phi2 * phi / dsum
        r = step if lo < step < hi else 0.5 * (lo + hi)
    return V @ (gh * (r / (q * r + 1.0)))


def solve_norm_prox(Q: np.ndarray, g: np.ndarray, tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Minimiser for an explicit SPD matrix ``Q``, via the compiled kernel used by the nodes."""
    q, V = np.linalg.eigh(np.asarray(Q, dtype=float))
    if not q[0] > 0:
        raise SolverInvariantError("quadratic term is not positive definite")
    out = np.empty(len(q))
    _prox_kernel(q, V, np.asarray(g, dtype=float), tol, max_iter, out)
    return out


def prox_residual(Q: np.ndarray, g: np.ndarray, u: np.ndarray) -> float:
    """Optimality residual of ``u`` for ``||u|| + u'Qu/2 - g'u``.

    For ``u != 0`` this is ``||Qu - g + u/||u||||``; at ``u = 0`` it is
    ``max(||g|| - 1, 0)`` (distance of ``g`` from the unit ball).
    """
    n = np.linalg.norm(u)
    if n == 0:
        return max(float(np.linalg.norm(g)) - 1.0, 0.0)
    return float(np.linalg.norm(Q @ u - g + u / n))


@njit(cache=True, nogil=True)
def _prox_kernel(q, V, g, tol, max_iter, out):
    n = g.shape[0]
    gnorm2 = 0.0
    for a in range(n):
        gnorm2 += g[a] * g[a]
    if gnorm2 <= 1.0:
        for a in range(n):
            out[a] = 0.0
        return
    gnorm = np.sqrt(gnorm2)
    gh = np.empty(n)
    qmin = q[0]
    qmax = q[0]
    for k in range(n):
        acc = 0.0
        for a in range(n):
            acc += V[a, k] * g[a]
        gh[k] = acc
        qmin = min(qmin, q[k])
        qmax = max(qmax, q[k])
    lo = (gnorm - 1.0) / qmax
    hi = (gnorm - 1.0) / qmin
    r = lo
    for _ in range(max_iter):
        phi2 = 0.0
        dsum = 0.0
        for k in range(n):
            s = q[k] * r + 1.0
            t = gh[k] * gh[k] / (s * s)
            phi2 += t
            dsum += t * q[k] / s
        phi = np.sqrt(phi2)
        if abs(phi - 1.0) <= tol:
            break
        f = 1.0 / phi - 1.0
        if f < 0.0:
            lo = r
        else:
            hi = r
        step = r - f * phi2 * phi / dsum
        if lo < step < hi:
            r = step
        else:
            r = 0.5 * (lo + hi)
    for a in range(n):
        acc = 0.0
        for k in range(n):
            acc += V[a, k] * gh[k] * (r / (q[k] * r + 1.0))
        out[a] = acc


@njit(cache=True, nogil=True)
def _x_kernel(r_self, b0, rw, lam, w_in, g0, mu, gamma, V, x_bar, rho, tol, max_iter, x_hat):
    deg, n = r_self.shape
    g = np.empty(n)
    for a in range(n):
        g[a] = rho * g0[a]
    for k in range(deg):
        coef = rho * (b0[k] - rw[k]) - lam[k]
        for a in range(n):
            g[a] += r_self[k, a] * coef + rho * w_in[k, a] - mu[k, a]
    q = np.empty(n)
    for a in range(n):
        q[a] = rho * (gamma[a] + deg)
        if not q[a] > 0.0:
            return False
    u = np.empty(n)
    _prox_kernel(q, V, g, tol, max_iter, u)
    for a in range(n):
        x_hat[a] = u[a] - x_bar[a]
    return True


@njit(cache=True, nogil=True)
def _w_kernel(r_self, x_hat, z, lam, x_nb, mu_in, rho, w_out, rw):
    deg, n = r_self.shape
    rhs = np.empty(n)
    for k in range(deg):
        a_k = -z[k]
        rr = 0.0
        for a in range(n):
            a_k += r_self[k, a] * x_hat[a]
            rr += r_self[k, a] * r_self[k, a]
        scale = rho * a_k + lam[k]
        rdot = 0.0
        for a in range(n):
            # r_nb = -r_self
            rhs[a] = scale * r_self[k, a] + rho * x_nb[k, a] + mu_in[k, a]
            rdot -= r_self[k, a] * rhs[a]
        coef = rdot / (1.0 + rr)
        for a in range(n):
            w_out[k, a] = (rhs[a] + r_self[k, a] * coef) / rho
        rw[k] = coef / rho


@njit(cache=True, nogil=True)
def _dual_kernel(r_self, x_hat, rw, z, w_in, rho, tau, lam, mu):
    deg, n = r_self.shape
    flag = False
    tau2 = tau * tau
    for k in range(deg):
        c = rw[k] - z[k]
        for a in range(n):
            c += r_self[k, a] * x_hat[a]
        lam[k] += rho * c
        if abs(lam[k]) > tau:
            flag = True
        m2 = 0.0
        for a in range(n):
            mu[k, a] += rho * (x_hat[a] - w_in[k, a])
            m2 += mu[k, a] * mu[k, a]
        if m2 > tau2:
            flag = True
    return flag


class SolverNode:
    """ADMM state held by one robot."""

    def __init__(self, i: int, neighbors, edges, dim: int, pos_slice: slice):
        self.id = int(i)
        self.dim = int(dim)
        self.pos_slice = pos_slice
        self.x_bar = np.zeros(dim)
        self.x_hat = np.zeros(dim)
        self.cold_start_flag = False
        self._set_neighbors(tuple(neighbors), tuple(edges))

    def _set_neighbors(self, neighbors, edges):
        if len(neighbors) == 0:
            raise ValueError(f"robot {self.id} has no neighbours")
        if list(neighbors) != sorted(neighbors) or len(edges) != len(neighbors):
            raise ValueError("neighbours must be ascending with one edge each")
        deg, n = len(neighbors), self.dim
        self.neighbors = neighbors
        self.edges = edges
        self.index = {j: k for k, j in enumerate(neighbors)}
        self.x_bar_nb = np.zeros((deg, n))
        self.p_hat = np.zeros(n)
        self.p_hat_nb = np.zeros((deg, n))
        self.x_nb = np.zeros((deg, n))
        self.mu_in = np.zeros((deg, n))
        self.w_out = np.zeros((deg, n))
        self.w_in = np.zeros((deg, n))
        self.lam = np.zeros(deg)
        self.mu = np.zeros((deg, n))
        self.r_self = np.zeros((deg, n))
        self.z = np.zeros(deg)
        self.rw = np.zeros(deg)  # r_nb . w_out per neighbour
        self.deg = deg
        self._gram_eig = (np.zeros(n), np.eye(n))
        self.dist = np.zeros(deg)
        self._b0 = np.zeros(deg)
        self._g0 = np.zeros(n)

    @property
    def degree(self) -> int:
        return len(self.neighbors)

    def rewire(self, neighbors, edges):
        """Switch to a new neighbourhood, keeping state for surviving neighbours."""
        neighbors, edges = tuple(neighbors), tuple(edges)
        if neighbors == self.neighbors and edges == self.edges:
            return
        old = {j: k for j, k in self.index.items()}
        saved = {name: getattr(self, name) for name in ("x_bar_nb", "p_hat_nb", "lam", "mu")}
        self._set_neighbors(neighbors, edges)
        for k, j in enumerate(neighbors):
            if j in old:
                for name, arr in saved.items():
                    getattr(self, name)[k] = arr[old[j]]

    @property
    def r_nb(self) -> np.ndarray:
        return -self.r_self

    def reset_duals(self):
        self.lam[:] = 0.0
        self.mu[:] = 0.0
        self.cold_start_flag = False

    def local_objective(self, rho: float) -> float:
        """Robot ``i``'s augmented Lagrangian term at the current iterates."""
        c = self.constraint_c()
        d = self.x_hat[None, :] - self.w_in
        return float(np.linalg.norm(self.x_hat + self.x_bar)
                     + 0.5 * rho * (c @ c) + self.lam @ c
                     + 0.5 * rho * np.sum(d * d) + np.sum(self.mu * d))

    def constraint_c(self) -> np.ndarray:
        return self.r_self @ self.x_hat + self.rw - self.z

    def constraint_d(self) -> np.ndarray:
        return self.x_hat[None, :] - self.w_in

    def q_matrix(self, rho: float) -> np.ndarray:
        return rho * (self.r_self.T @ self.r_self + self.degree * np.eye(self.dim))


def linearize(node: SolverNode, y_hat_local: np.ndarray, guard: float = GUARD_DISTANCE):
    """Re-linearise the incident range constraints at ``p_hat + x_bar``.

    Uses the node's own ``p_hat``/``x_bar`` and the neighbour copies delivered
    in the pose exchange. Also starts a fresh inner loop (copies set to zero).
    """
    lo, hi, _ = node.pos_slice.indices(node.dim)
    gamma, V = node._gram_eig
    k = _linearize_kernel(node.p_hat, node.x_bar, node.p_hat_nb, node.x_bar_nb,
                          np.asarray(y_hat_local, dtype=float), lo, hi, guard,
                          node.r_self, node.z, gamma, V, node._b0, node._g0, node.dist,
                          node.w_out, node.rw, node.w_in, node.x_hat, node.x_nb)
    if k >= 0:
        raise DegenerateGeometryError(node.edges[k], (node.id, node.neighbors[k]), float(node.dist[k]))
    return node.z, node.r_self


@njit(cache=True, nogil=True)
def _linearize_kernel(p_hat, x_bar, p_hat_nb, x_bar_nb, y, lo, hi, guard,
                      r_self, z, gamma, V, b0, g0, dist, w_out, rw, w_in, x_hat, x_nb):
    """Returns the first degenerate neighbour index, or -1."""
    deg, n = r_self.shape
    for k in range(deg):
        d2 = 0.0
        for a in range(lo, hi):
            t = (p_hat[a] + x_bar[a]) - (p_hat_nb[k, a] + x_bar_nb[k, a])
            d2 += t * t
        dist[k] = np.sqrt(d2)
        if not dist[k] >= guard:
            return k
    gram = np.zeros((n, n))
    for k in range(deg):
        for a in range(n):
            r_self[k, a] = 0.0
        for a in range(lo, hi):
            r_self[k, a] = ((p_hat[a] + x_bar[a]) - (p_hat_nb[k, a] + x_bar_nb[k, a])) / dist[k]
        z[k] = y[k] - dist[k]
        acc = z[k]
        for a in range(n):
            acc += r_self[k, a] * x_bar[a]
            for c in range(n):
                gram[a, c] += r_self[k, a] * r_self[k, c]
        # terms fixed for the whole inner loop
        b0[k] = acc
        rw[k] = 0.0
        for a in range(n):
            w_out[k, a] = 0.0
            w_in[k, a] = 0.0
            x_nb[k, a] = 0.0
    ev, vecs = np.linalg.eigh(gram)
    gamma[:] = ev
    V[:, :] = vecs
    for a in range(n):
        g0[a] = deg * x_bar[a]
        x_hat[a] = 0.0
    return -1


def x_update(node: SolverNode, cfg: SolverConfig) -> np.ndarray:
    """Exact minimiser of robot ``i``'s Lagrangian term over its own step.

    With ``u = x_hat + x_bar`` the term reduces to
    ``||u|| + u'Qu/2 - g'u``, ``Q = rho (sum_l r_l r_l' + deg I)``, which is
    solved by the same secular-equation iteration as :func:`solve_norm_prox`.
    """
    gamma, V = node._gram_eig
    ok = _x_kernel(node.r_self, node._b0, node.rw, node.lam, node.w_in, node._g0, node.mu,
                   gamma, V, node.x_bar, cfg.rho, cfg.prox_tol, cfg.max_prox_iter, node.x_hat)
    if not ok:
        raise SolverInvariantError(f"robot {node.id}: quadratic term is not positive definite")
    return node.x_hat


def w_update(node: SolverNode, cfg: SolverConfig) -> np.ndarray:
    """Solve for robot ``i``'s copies of each neighbour's step.

    Needs ``x_nb`` (neighbour steps) and ``mu_in`` (the neighbours' consistency
    duals toward ``i``) from the preceding exchange. Each copy solves
    ``rho (r r' + I) w = rhs`` with ``r = R[l, j]``; the rank-one structure
    gives the inverse in closed form.
    """
    _w_kernel(node.r_self, node.x_hat, node.z, node.lam, node.x_nb, node.mu_in, cfg.rho, node.w_out, node.rw)
    return node.w_out


def dual_update(node: SolverNode, cfg: SolverConfig):
    """Dual ascent on both constraint families at the latest primal iterates."""
    if _dual_kernel(node.r_self, node.x_hat, node.rw, node.z, node.w_in, cfg.rho,
                    cfg.dual_threshold, node.lam, node.mu):
        node.cold_start_flag = True
    return node.lam, node.mu, node.cold_start_flag


def accumulate_and_reset(node: SolverNode, cfg: SolverConfig) -> np.ndarray:
    """Fold the inner-loop steps into the accumulated errors, then apply the reset rule.

    ``warm_start=False`` clears the duals every outer round; otherwise they
    are cleared only when ``cold_start`` is on and the flag was raised.
    """
    node.x_bar += node.x_hat
    node.x_bar_nb += node.x_nb
    node.x_hat[:] = 0.0
    node.x_nb[:] = 0.0
    if not cfg.warm_start or (cfg.cold_start and node.cold_start_flag):
        node.reset_duals()
    node.cold_start_flag = False
    return node.x_bar
