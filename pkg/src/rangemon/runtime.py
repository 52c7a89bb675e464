"""Synchronous message-passing execution of the distributed monitor.

Every robot runs a :class:`~rangemon.solver.SolverNode`. Nodes only see data
that a neighbour wrote into a :class:`Mailbox` slot, and the runtime opens a
slot for reading only at a logical barrier: a phase completes when every
expected message for the current round tag is present exactly once. Updates
are node-local and run in ascending robot id, so results do not depend on
how many threads drive the nodes.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .blockvec import BlockLayout, BlockVec
from .solver import (
    SolverConfig,
    SolverInvariantError,
    SolverNode,
    _dual_kernel,
    _w_kernel,
    _x_kernel,
    accumulate_and_reset,
    linearize,
)
from .topology import SwarmGraph, TopologySchedule

log = logging.getLogger(__name__)

POSE, PRIMAL_X, PRIMAL_W = "PoseShare", "PrimalX", "PrimalW"


class BarrierError(RuntimeError):
    """A barrier found a missing, duplicated, or stale message."""

    def __init__(self, msg: str, sender: int, receiver: int, round_tag):
        super().__init__(f"{msg}: sender={sender} receiver={receiver} round={round_tag}")
        self.sender = sender
        self.receiver = receiver
        self.round_tag = round_tag


@dataclass(slots=True)
class RoundMessage:
    kind: str
    sender: int
    receiver: int
    round: tuple
    payload: tuple


class Mailbox:
    """Buffers for one message kind, one slot per directed neighbour pair.

    A sender writes its payload rows and stamps each slot with the current
    round tag; :meth:`barrier` then requires every slot to carry exactly one
    write stamped with that tag before receivers may read.

    Parameters
    ----------
    kind : str
        Message kind, used in error reports.
    pairs : list of (sender, receiver)
        Slot order.
    fields : dict
        Payload field name mapped to row shape.
    """

    def __init__(self, kind: str, pairs, fields: dict):
        self.kind = kind
        self.pairs = list(pairs)
        self.slot = {pair: s for s, pair in enumerate(self.pairs)}
        size = len(self.pairs)
        self.data = {name: np.zeros((size, *shape)) for name, shape in fields.items()}
        self.tags = np.full((size, 3), -1, dtype=np.int64)
        self.writes = np.zeros(size, dtype=np.int64)
        self.delivered = 0

    def write(self, slots, round_tag, **rows):
        """Store payload rows in ``slots``; ``round_tag`` may be a length-3 array."""
        data = self.data
        for name, value in rows.items():
            data[name][slots] = value
        self.tags[slots] = round_tag
        self.writes[slots] += 1

    def post(self, msg: RoundMessage):
        """Write a single :class:`RoundMessage` into its slot."""
        if msg.kind != self.kind:
            raise BarrierError(f"{msg.kind} message sent to the {self.kind} mailbox",
                               msg.sender, msg.receiver, msg.round)
        s = self.slot.get((msg.sender, msg.receiver))
        if s is None:
            raise BarrierError("message between non-neighbours", msg.sender, msg.receiver, msg.round)
        self.write([s], msg.round, **{name: [v] for name, v in zip(self.data, msg.payload)})

    def barrier(self, round_tag: tuple):
        ok = (self.writes == 1) & np.all(self.tags == np.asarray(round_tag), axis=1)
        if not ok.all():
            s = int(np.flatnonzero(~ok)[0])
            sender, receiver = self.pairs[s]
            if self.writes[s] == 0:
                why = f"missing {self.kind} message"
            elif self.writes[s] > 1:
                why = f"duplicate {self.kind} message"
            else:
                why = f"stale {self.kind} message from round {tuple(int(t) for t in self.tags[s])}"
            raise BarrierError(why, sender, receiver, round_tag)
        self.writes[:] = 0
        self.delivered += len(self.pairs)

    def read(self, slots) -> tuple:
        return tuple(arr[slots] for arr in self.data.values())

    def pending(self) -> list[RoundMessage]:
        """Messages written since the last barrier, for inspection and logging."""
        return [RoundMessage(self.kind, snd, rcv, tuple(int(t) for t in self.tags[s]),
                             tuple(arr[s].copy() for arr in self.data.values()))
                for s, (snd, rcv) in enumerate(self.pairs) if self.writes[s]]


# Node phases fused with their mailbox traffic: each reads only its own
# incoming slots and writes only its own contiguous outgoing slots.


@njit(cache=True, nogil=True)
def _post(rows, box, lo, tags, writes, stamp):
    for k in range(rows.shape[0]):
        box[lo + k, :] = rows[k]
        tags[lo + k, :] = stamp
        writes[lo + k] += 1


@njit(cache=True, nogil=True)
def _x_phase(r_self, b0, rw, lam, w_in, g0, mu, gamma, V, x_bar, rho, tol, max_iter, x_hat,
             box_x, box_mu, tags, writes, lo, stamp):
    if not _x_kernel(r_self, b0, rw, lam, w_in, g0, mu, gamma, V, x_bar, rho, tol, max_iter, x_hat):
        return False
    for k in range(r_self.shape[0]):
        box_x[lo + k, :] = x_hat
        box_mu[lo + k, :] = mu[k]
        tags[lo + k, :] = stamp
        writes[lo + k] += 1
    return True


@njit(cache=True, nogil=True)
def _w_phase(r_self, x_hat, z, lam, x_nb, mu_in, rho, w_out, rw, box_x, box_mu, inc, box_w, tags, writes, lo, stamp):
    for k in range(inc.shape[0]):
        x_nb[k, :] = box_x[inc[k]]
        mu_in[k, :] = box_mu[inc[k]]
    _w_kernel(r_self, x_hat, z, lam, x_nb, mu_in, rho, w_out, rw)
    _post(w_out, box_w, lo, tags, writes, stamp)


@njit(cache=True, nogil=True)
def _dual_phase(r_self, x_hat, rw, z, w_in, rho, tau, lam, mu, box_w, inc):
    for k in range(inc.shape[0]):
        w_in[k, :] = box_w[inc[k]]
    return _dual_kernel(r_self, x_hat, rw, z, w_in, rho, tau, lam, mu)


class SwarmRuntime:
    """Drives one solver node per robot through lockstep rounds.

    Parameters
    ----------
    schedule : TopologySchedule or SwarmGraph
        Communication/sensing graph, possibly time-varying.
    layout : BlockLayout
        Per-robot state layout (uniform dimension).
    pos_slice : slice
        Position components inside each state block.
    threads : int
        Worker threads used to run node computations between barriers.
    """

    def __init__(self, schedule, layout: BlockLayout, pos_slice: slice, threads: int = 1):
        if isinstance(schedule, SwarmGraph):
            schedule = TopologySchedule.static(schedule)
        if not layout.is_uniform:
            raise ValueError("the runtime requires one state dimension shared by all robots")
        self.schedule = schedule
        self.layout = layout
        self.pos_slice = pos_slice
        self.dim = layout.block_dims[0]
        self.graph = schedule.at(0)
        self.nodes = [self._make_node(i, self.graph) for i in range(self.graph.num_vertices)]
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None
        self.outer = 0
        self.inner = 0
        self.step = 0
        self._retired_messages = 0
        self.mailboxes: dict[str, Mailbox] = {}
        # when set, (round tag, phase, global augmented Lagrangian) per phase
        self.objective_log: list | None = None
        self._wire()

    def _make_node(self, i: int, g: SwarmGraph) -> SolverNode:
        nbrs = g.neighbors(i)
        return SolverNode(i, nbrs, tuple(g.edge_between(i, j) for j in nbrs), self.dim, self.pos_slice)

    def _wire(self):
        self._retired_messages += sum(m.delivered for m in self.mailboxes.values())
        pairs = [(node.id, j) for node in self.nodes for j in node.neighbors]
        n = self.dim
        self.mailboxes = {
            POSE: Mailbox(POSE, pairs, {"p_hat": (n,), "x_bar": (n,)}),
            PRIMAL_X: Mailbox(PRIMAL_X, pairs, {"x_hat": (n,), "mu": (n,)}),
            PRIMAL_W: Mailbox(PRIMAL_W, pairs, {"w": (n,)}),
        }
        slot = self.mailboxes[POSE].slot
        # slots follow each node's ascending neighbour order; a sender's
        # outgoing slots are contiguous, so they are addressed by slice
        start = np.cumsum([0] + [node.degree for node in self.nodes])
        self._out = [slice(int(a), int(b)) for a, b in zip(start[:-1], start[1:])]
        self._in = [np.array([slot[(j, node.id)] for j in node.neighbors], dtype=np.intp) for node in self.nodes]
        self._edge_rows = [list(node.edges) for node in self.nodes]

    @property
    def messages_delivered(self) -> int:
        return self._retired_messages + sum(m.delivered for m in self.mailboxes.values())

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _each(self, fn: Callable[[SolverNode], object]) -> list:
        if self._pool is None:
            return [fn(node) for node in self.nodes]
        return list(self._pool.map(fn, self.nodes))

    def set_step(self, k: int):
        """Resolve the topology phase for simulation step ``k``."""
        self.step = k
        g = self.schedule.at(k)
        if g is not self.graph:
            self.graph = g
            for node in self.nodes:
                nbrs = g.neighbors(node.id)
                node.rewire(nbrs, tuple(g.edge_between(node.id, j) for j in nbrs))
            self._wire()

    def outer_round(self, p_hat: BlockVec, y_hat: BlockVec, cfg: SolverConfig) -> BlockVec:
        """One SCP round: pose exchange, linearisation, inner ADMM loop, accumulation.

        Returns the accumulated errors; use :meth:`advance` when iterates may
        have blown up and the caller checks finiteness itself.
        """
        self.advance(p_hat, y_hat, cfg)
        return self.x_bar()

    def advance(self, p_hat: BlockVec, y_hat: BlockVec, cfg: SolverConfig):
        """Run one outer round without building the result snapshot."""
        p = p_hat.data.reshape(-1, self.dim)
        y = y_hat.data
        if y.shape[0] != self.graph.num_edges:
            raise ValueError(f"expected {self.graph.num_edges} ranges, got {y.shape[0]}")
        self.inner = 0
        tag = (self.step, self.outer, -1)
        stamp = np.array(tag)
        box = self.mailboxes[POSE]
        out, inc, rows = self._out, self._in, self._edge_rows

        def share(node):
            node.p_hat = p[node.id].copy()
            box.write(out[node.id], stamp, p_hat=node.p_hat, x_bar=node.x_bar)

        def relinearize(node):
            # the owner's accumulated error replaces this node's running copy
            node.p_hat_nb[:], node.x_bar_nb[:] = box.read(inc[node.id])
            linearize(node, y[rows[node.id]])

        self._each(share)
        box.barrier(tag)
        self._each(relinearize)
        for _ in range(cfg.n_admm):
            self.inner_round(cfg)
        self._each(lambda node: accumulate_and_reset(node, cfg))
        self.outer += 1

    def inner_round(self, cfg: SolverConfig):
        """One ADMM iteration across the swarm (three phases, two exchanges)."""
        tag = (self.step, self.outer, self.inner)
        stamp = np.array(tag)
        xbox, wbox = self.mailboxes[PRIMAL_X], self.mailboxes[PRIMAL_W]
        out, inc = self._out, self._in
        x_in, mu_in, w_in = xbox.data["x_hat"], xbox.data["mu"], wbox.data["w"]

        xd, md, xt, xw = x_in, mu_in, xbox.tags, xbox.writes
        wt, ww = wbox.tags, wbox.writes
        rho, tol, iters, tau = cfg.rho, cfg.prox_tol, cfg.max_prox_iter, cfg.dual_threshold

        def primal_x(node):
            gamma, V = node._gram_eig
            if not _x_phase(node.r_self, node._b0, node.rw, node.lam, node.w_in, node._g0, node.mu, gamma, V,
                            node.x_bar, rho, tol, iters, node.x_hat, xd, md, xt, xw, out[node.id].start, stamp):
                raise SolverInvariantError(f"robot {node.id}: quadratic term is not positive definite")

        def primal_w(node):
            _w_phase(node.r_self, node.x_hat, node.z, node.lam, node.x_nb, node.mu_in, rho, node.w_out, node.rw,
                     xd, md, inc[node.id], w_in, wt, ww, out[node.id].start, stamp)

        def dual(node):
            if _dual_phase(node.r_self, node.x_hat, node.rw, node.z, node.w_in, rho, tau, node.lam, node.mu,
                           w_in, inc[node.id]):
                node.cold_start_flag = True

        log_obj = self.objective_log is not None
        if log_obj:
            self._log_objective(tag, "start", cfg)
        self._each(primal_x)
        xbox.barrier(tag)
        if log_obj:
            self._log_objective(tag, "x", cfg)
        self._each(primal_w)
        wbox.barrier(tag)
        if log_obj:
            for node in self.nodes:
                node.w_in[:] = w_in[inc[node.id]]
            self._log_objective(tag, "w", cfg)
        self._each(dual)
        self.inner += 1

    def augmented_lagrangian(self, rho: float) -> float:
        """Sum of the robots' augmented Lagrangian terms at the current iterates."""
        return sum(node.local_objective(rho) for node in self.nodes)

    def _log_objective(self, tag, phase, cfg):
        self.objective_log.append((tag, phase, self.augmented_lagrangian(cfg.rho)))

    def x_bar(self) -> BlockVec:
        return BlockVec(self.layout, np.concatenate([n.x_bar for n in self.nodes]))

    def reconstruction(self) -> np.ndarray:
        """``(N, n)`` array of ``x_hat + x_bar`` per robot."""
        return np.stack([n.x_hat + n.x_bar for n in self.nodes])

    def max_dual_norm(self) -> float:
        return max(max(np.abs(n.lam).max(initial=0.0), np.linalg.norm(n.mu, axis=1).max(initial=0.0))
                   for n in self.nodes)


def run_trial(cfg, trial: int = 0, threads: int = 1):
    """Run one seeded trial of a scenario; see :func:`rangemon.trial.run_trial`."""
    from .trial import run_trial as _run

    return _run(cfg, trial, threads)
