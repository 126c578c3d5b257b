"""
Synchronous message-passing simulator.

All data flow between agents goes through a :class:`Network`, which offers
three primitives (neighbour mixing, scalar sum, scalar min) and counts every
use.  Reductions fold in agent-index order so results are reproducible bit
for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass(frozen=True)
class Tallies:
    neighbor_rounds: int = 0
    allreduce_sum_calls: int = 0
    allreduce_min_calls: int = 0
    values_moved: int = 0
    prox_grad_evals: tuple = ()

    def as_dict(self):
        return asdict(self)


class Network:
    """
    Simulated synchronous network over a topology.

    Parameters
    ----------
    topology : Topology
    executor : concurrent.futures.Executor, optional
        When given, per-agent work submitted through :meth:`local` runs on it.
        Results are collected in agent order, so any schedule gives the same
        output as the sequential one.
    record_access : bool
        Keep a log of which payload rows each agent read in every exchange.
    """

    def __init__(self, topology, executor=None, record_access=False):
        self.topology = topology
        self.n = topology.n
        self.executor = executor
        self.record_access = record_access
        self.access_log = []
        self.neighbor_rounds = 0
        self.allreduce_sum_calls = 0
        self.allreduce_min_calls = 0
        self.values_moved = 0
        self.prox_grad_evals = [0] * self.n

    @property
    def round_counter(self):
        return self.neighbor_rounds + self.allreduce_sum_calls + self.allreduce_min_calls

    def snapshot(self):
        return Tallies(
            self.neighbor_rounds,
            self.allreduce_sum_calls,
            self.allreduce_min_calls,
            self.values_moved,
            tuple(self.prox_grad_evals),
        )

    def count_prox_grad(self, i):
        self.prox_grad_evals[i] += 1

    def neighbor_mix(self, payload, mixing):
        """
        Return ``W @ payload`` computed agent by agent from neighbour rows.

        Row ``i`` of the result only reads rows ``N(i) | {i}`` of the payload.
        """
        payload = np.asarray(payload, dtype=float)
        if payload.shape[0] != self.n or mixing.n != self.n:
            raise ValueError(
                f"payload has {payload.shape[0]} rows, network has {self.n} agents, "
                f"W has {mixing.n}"
            )
        W = mixing.W
        out = np.empty_like(payload)
        width = int(np.prod(payload.shape[1:], dtype=int))
        log = [] if self.record_access else None
        for i in range(self.n):
            reads = (i,) + self.topology.neighbors[i]
            acc = W[i, i] * payload[i]
            for j in self.topology.neighbors[i]:
                acc = acc + W[i, j] * payload[j]
            out[i] = acc
            self.values_moved += width * len(self.topology.neighbors[i])
            if log is not None:
                log.append(reads)
        if log is not None:
            self.access_log.append(log)
        self.neighbor_rounds += 1
        return out

    def _check_locals(self, values):
        values = [float(v) for v in values]
        if len(values) != self.n:
            raise ValueError(f"expected {self.n} scalars, got {len(values)}")
        return values

    def allreduce_sum(self, values):
        """Sum of one scalar per agent, folded left to right."""
        values = self._check_locals(values)
        total = 0.0
        for v in values:
            total += v
        self.allreduce_sum_calls += 1
        self.values_moved += self.n
        return total

    def allreduce_min(self, values):
        """Minimum of one scalar per agent."""
        values = self._check_locals(values)
        m = values[0]
        for v in values[1:]:
            if v < m:
                m = v
        self.allreduce_min_calls += 1
        self.values_moved += self.n
        return m

    def local(self, fn, agents=None):
        """Evaluate ``fn(i)`` for each agent and return the results in order."""
        agents = range(self.n) if agents is None else list(agents)
        if self.executor is None:
            return [fn(i) for i in agents]
        futures = [self.executor.submit(fn, i) for i in agents]
        return [f.result() for f in futures]
