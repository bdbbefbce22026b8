"""Node-removal attacks, vulnerability index and critical sets.

The largest-connected-component size is always divided by the original node
count N, isolates included. Targeted strategies are adaptive: the score is
recomputed on the remaining graph after every removal, and ties go to the
lexicographically smallest learner ID.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import networkx as nx
import numpy as np

from .network import CommNetwork
from .seeding import derive_seed

STRATEGIES = ("degree_recomputed", "betweenness_recomputed", "random")
DEFAULT_EPSILON = 0.05
_TOL = 1e-12


@dataclass(frozen=True)
class AttackCurve:
    fractions: tuple[float, ...]
    lcc: tuple[float, ...]
    strategy: str
    replicates: int
    order: tuple[str, ...] | None = None  # None for averaged random curves

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fractions, self.lcc))


@dataclass(frozen=True)
class CriticalSet:
    nodes: tuple[str, ...]
    epsilon: float
    achieved_lcc: float
    strategy: str

    def __len__(self) -> int:
        return len(self.nodes)


class _DSU:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return self.size[ra]
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return self.size[ra]


def lcc_profile(g: nx.Graph, order: Sequence[str]) -> list[int]:
    """LCC size after removing the first k nodes of ``order``, k = 0..N.

    Computed backwards: nodes are re-inserted in reverse with union-find.
    """
    n = g.number_of_nodes()
    if len(order) != n or set(order) != set(g.nodes):
        raise ValueError("order must be a permutation of the graph's nodes")
    idx = {node: i for i, node in enumerate(order)}
    dsu = _DSU(n)
    present = [False] * n
    sizes = [0] * (n + 1)
    best = 0
    for k in range(n - 1, -1, -1):
        node = order[k]
        i = idx[node]
        present[i] = True
        best = max(best, 1)
        for nb in g.neighbors(node):
            j = idx[nb]
            if present[j]:
                best = max(best, dsu.union(i, j))
        sizes[k] = best
    return sizes


def _degree_order(g: nx.Graph) -> list[str]:
    deg = dict(g.degree())
    heap = [(-d, node) for node, d in deg.items()]
    heapq.heapify(heap)
    removed = set()
    order = []
    while heap:
        d, node = heapq.heappop(heap)
        if node in removed or -d != deg[node]:
            continue
        removed.add(node)
        order.append(node)
        for nb in g.neighbors(node):
            if nb not in removed:
                deg[nb] -= 1
                heapq.heappush(heap, (-deg[nb], nb))
    return order


def _betweenness_order(g: nx.Graph) -> list[str]:
    h = g.copy()
    order = []
    while h.number_of_nodes():
        bc = nx.betweenness_centrality(h, normalized=False)
        # rounding keeps floating-point noise from splitting exact ties
        node = min(h.nodes, key=lambda v: (-round(bc[v], 9), v))
        order.append(node)
        h.remove_node(node)
    return order


def removal_order(g: nx.Graph, strategy: str, rng: np.random.Generator | None = None) -> list[str]:
    if strategy == "degree_recomputed":
        return _degree_order(g)
    if strategy == "betweenness_recomputed":
        return _betweenness_order(g)
    if strategy == "random":
        if rng is None:
            raise ValueError("random strategy needs an rng")
        nodes = sorted(g.nodes)
        return [nodes[i] for i in rng.permutation(len(nodes))]
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def _graph(net: CommNetwork | nx.Graph) -> nx.Graph:
    g = net.to_networkx() if isinstance(net, CommNetwork) else net
    if g.number_of_nodes() == 0:
        raise ValueError("cannot attack an empty network")
    return g


def attack_curve(net: CommNetwork | nx.Graph, strategy: str = "degree_recomputed", replicates: int = 1,
                 seed: int = 0) -> AttackCurve:
    g = _graph(net)
    n = g.number_of_nodes()
    fractions = tuple(k / n for k in range(n + 1))
    if strategy != "random":
        order = removal_order(g, strategy)
        sizes = lcc_profile(g, order)
        return AttackCurve(fractions, tuple(s / n for s in sizes), strategy, 1, tuple(order))
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    total = np.zeros(n + 1)
    for r in range(replicates):
        rng = np.random.default_rng(derive_seed(seed, "attack", r))
        total += lcc_profile(g, removal_order(g, "random", rng))
    return AttackCurve(fractions, tuple((total / (replicates * n)).tolist()), strategy, replicates)


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie strictly between 0 and 1")


def vulnerability_index(curve: AttackCurve, epsilon: float = DEFAULT_EPSILON) -> float:
    """Smallest removed fraction whose LCC share is <= epsilon (1.0 if never)."""
    _check_epsilon(epsilon)
    for frac, lcc in curve.points:
        if lcc <= epsilon + _TOL:
            return frac
    return 1.0


def critical_set(net: CommNetwork | nx.Graph, strategy: str = "degree_recomputed",
                 epsilon: float = DEFAULT_EPSILON, seed: int = 0) -> CriticalSet:
    """Shortest removal prefix, under ``strategy``, that pushes the LCC share to <= epsilon.

    The random strategy uses the single permutation of replicate 0.
    """
    _check_epsilon(epsilon)
    g = _graph(net)
    n = g.number_of_nodes()
    rng = np.random.default_rng(derive_seed(seed, "attack", 0)) if strategy == "random" else None
    order = removal_order(g, strategy, rng)
    sizes = lcc_profile(g, order)
    for k, s in enumerate(sizes):
        if s / n <= epsilon + _TOL:
            return CriticalSet(tuple(order[:k]), epsilon, s / n, strategy)
    raise AssertionError("unreachable: removing every node empties the graph")


def lcc_fraction(g: nx.Graph, removed: set[str] | frozenset[str] = frozenset()) -> float:
    n = g.number_of_nodes()
    rest = g.subgraph(v for v in g.nodes if v not in removed)
    if rest.number_of_nodes() == 0:
        return 0.0
    return max(len(c) for c in nx.connected_components(rest)) / n


def brute_force_min_critical_set(net: CommNetwork | nx.Graph, epsilon: float = DEFAULT_EPSILON,
                                 max_n: int = 12) -> CriticalSet:
    """Exact minimum node set with LCC share <= epsilon, by subset enumeration.

    Exponential; refuses graphs with more than ``max_n`` nodes. Among
    minimum sets the lexicographically first (over sorted IDs) is returned.
    """
    _check_epsilon(epsilon)
    g = _graph(net)
    n = g.number_of_nodes()
    if n > max_n:
        raise ValueError(f"brute force refuses {n} nodes (max_n={max_n})")
    nodes = sorted(g.nodes)
    for k in range(n + 1):
        for combo in combinations(nodes, k):
            lcc = lcc_fraction(g, set(combo))
            if lcc <= epsilon + _TOL:
                return CriticalSet(combo, epsilon, lcc, "brute_force")
    raise AssertionError("unreachable")
