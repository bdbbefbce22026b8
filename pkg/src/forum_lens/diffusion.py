"""Discrete-time Susceptible-Infected spreading on co-posting networks.

Updates are synchronous: in every step each infected–susceptible edge
transmits independently with probability ``beta`` (or ``1 - (1 - beta)**w``
in weighted mode), and newly infected nodes only start transmitting in the
next step.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import EventLog
from .network import CommNetwork, Scope, Window, build_conetwork, window_slices
from .seeding import derive_seed


@dataclass(frozen=True)
class InfectionTrace:
    infected: tuple[int, ...]  # infected count per step, step 0 = seeds
    n_nodes: int
    seeds: frozenset[str]
    beta: float
    scope: dict = field(default_factory=dict)
    weighted: bool = False

    @property
    def step_count(self) -> int:
        return len(self.infected) - 1

    @property
    def susceptible(self) -> tuple[int, ...]:
        return tuple(self.n_nodes - i for i in self.infected)

    @property
    def final_coverage(self) -> float:
        return self.infected[-1] / self.n_nodes

    def time_to_coverage(self, level: float = 0.5) -> float:
        for step, count in enumerate(self.infected):
            if count / self.n_nodes >= level:
                return step
        return math.inf


@dataclass(frozen=True)
class DiffusionSummary:
    mean_coverage: float
    std_coverage: float
    mean_time_to_half: float  # inf when some replicate never reaches half
    reached_half: int
    replicates: int

    def to_dict(self) -> dict:
        t = self.mean_time_to_half
        return {
            "mean_final_coverage": self.mean_coverage,
            "std_final_coverage": self.std_coverage,
            "mean_time_to_half": t if math.isfinite(t) else "unreached",
            "replicates_reaching_half": self.reached_half,
            "replicates": self.replicates,
        }


def _adjacency(net: CommNetwork) -> dict[str, list[tuple[str, int]]]:
    adj: dict[str, list[tuple[str, int]]] = {n: [] for n in sorted(net.nodes)}
    for (a, b), w in sorted(net.edges.items()):
        adj[a].append((b, w))
        adj[b].append((a, w))
    return adj


def _check_args(nodes: Iterable[str], seeds: Iterable[str], beta: float) -> frozenset[str]:
    nodes = set(nodes)
    seeds = frozenset(seeds)
    for s in sorted(seeds):
        if s not in nodes:
            raise ValueError(f"seed node {s!r} is not in the network")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return seeds


def _transmission(beta: float, w: int, weighted: bool) -> float:
    return 1.0 - (1.0 - beta) ** w if weighted else beta


def _step(adj, infected: set[str], beta: float, weighted: bool, rng: np.random.Generator) -> tuple[set[str], bool]:
    """One synchronous step. Returns (newly infected, frontier existed)."""
    contacts = [(v, nb, w) for v in sorted(infected) for nb, w in adj[v] if nb not in infected]
    if not contacts:
        return set(), False
    draws = rng.random(len(contacts))
    new = {nb for (v, nb, w), u in zip(contacts, draws) if u < _transmission(beta, w, weighted)}
    return new, True


def simulate_si(net: CommNetwork, seeds: Iterable[str], beta: float, max_steps: int, seed: int,
                weighted: bool = False) -> InfectionTrace:
    """Run until ``max_steps`` or until no susceptible node has an infected neighbour."""
    seeds = _check_args(net.nodes, seeds, beta)
    if max_steps < 0:
        raise ValueError("max_steps must be >= 0")
    adj = _adjacency(net)
    rng = np.random.default_rng(seed)
    infected = set(seeds)
    counts = [len(infected)]
    for _ in range(max_steps):
        new, frontier = _step(adj, infected, beta, weighted, rng)
        if not frontier:
            break
        infected |= new
        counts.append(len(infected))
    return InfectionTrace(tuple(counts), net.n_nodes, seeds, beta, net.scope.to_dict(), weighted)


def simulate_si_temporal(log: EventLog, scope: Scope, beta: float, seeds: Iterable[str], seed: int,
                         width: int = 7 * 86400, weighted: bool = False,
                         windows: Sequence[Window] | None = None) -> InfectionTrace:
    """SI where step k only uses edges of the k-th time window (1-based).

    The node set is every learner who contributes within ``scope`` over the
    whole course. The run ends early once no remaining window has an edge
    between an infected and a susceptible learner.
    """
    if scope.window is not None:
        raise ValueError("temporal simulation slices the course itself; pass a scope without a window")
    whole = build_conetwork(log, Scope(subforum=scope.subforum))
    seeds = _check_args(whole.nodes, seeds, beta)
    if windows is None:
        windows = window_slices(log, width)
    adjs = []
    for w in windows:
        wnet = build_conetwork(log, Scope(window=w, subforum=scope.subforum))
        adj = {n: [] for n in whole.nodes}
        for node, nbrs in _adjacency(wnet).items():
            adj[node] = nbrs
        adjs.append(adj)

    rng = np.random.default_rng(seed)
    infected = set(seeds)
    counts = [len(infected)]
    for k, adj in enumerate(adjs):
        if not any(nb not in infected for later in adjs[k:] for v in infected for nb, _ in later[v]):
            break
        new, _ = _step(adj, infected, beta, weighted, rng)
        infected |= new
        counts.append(len(infected))
    meta = Scope(subforum=scope.subforum).to_dict()
    meta["temporal_windows"] = len(windows)
    return InfectionTrace(tuple(counts), whole.n_nodes, seeds, beta, meta, weighted)


def random_seed_node(nodes: Sequence[str], replicate_seed: int) -> str:
    """The default seed: one node drawn uniformly from the sorted node list."""
    nodes = sorted(nodes)
    return nodes[int(np.random.default_rng(derive_seed(replicate_seed, "seed-node")).integers(len(nodes)))]


def replicate_si(net: CommNetwork, beta: float, max_steps: int, replicates: int, seed: int,
                 seeds: Sequence[str] | None = None, weighted: bool = False) -> list[InfectionTrace]:
    """Independent replicates; without explicit seeds each picks one uniform random node."""
    nodes = sorted(net.nodes)
    if not nodes:
        raise ValueError("network has no nodes")
    traces = []
    for r in range(replicates):
        sub = derive_seed(seed, "si", r)
        chosen = seeds
        if chosen is None:
            chosen = [random_seed_node(nodes, sub)]
        traces.append(simulate_si(net, chosen, beta, max_steps, sub, weighted=weighted))
    return traces


def diffusion_summary(traces: Sequence[InfectionTrace]) -> DiffusionSummary:
    if not traces:
        raise ValueError("need at least one trace")
    first = traces[0]
    for t in traces[1:]:
        if t.scope != first.scope or t.beta != first.beta or t.n_nodes != first.n_nodes or t.weighted != first.weighted:
            raise ValueError("traces come from different scopes or parameters")
    cov = [t.final_coverage for t in traces]
    times = [t.time_to_coverage(0.5) for t in traces]
    reached = [x for x in times if math.isfinite(x)]
    return DiffusionSummary(
        mean_coverage=statistics.fmean(cov),
        std_coverage=statistics.pstdev(cov),
        mean_time_to_half=statistics.fmean(reached) if len(reached) == len(times) else math.inf,
        reached_half=len(reached),
        replicates=len(traces),
    )
