"""Time-windowed, sub-forum-scoped co-posting networks.

Two learners are linked when both posted or commented in the same thread
within the scope; the edge weight is the number of distinct such threads.
Views and votes never create nodes or edges.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx

from .data import EventLog, ForumEvent

Edge = tuple[str, str]


@dataclass(frozen=True, order=True)
class Window:
    index: int
    start: int
    end: int

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("window end must be after start")

    def contains(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class Scope:
    window: Window | None = None
    subforum: str | None = None

    def matches(self, event: ForumEvent) -> bool:
        if self.subforum is not None and event.subforum != self.subforum:
            return False
        return self.window is None or self.window.contains(event.timestamp)

    @property
    def label(self) -> str:
        sf = self.subforum or "all"
        w = "course" if self.window is None else f"w{self.window.index:02d}"
        return f"{sf}__{w}"

    def to_dict(self) -> dict:
        w = self.window
        return {
            "subforum": self.subforum or "all",
            "window": None if w is None else {"index": w.index, "start": w.start, "end": w.end},
        }


def edge_key(a: str, b: str) -> Edge:
    if a == b:
        raise ValueError("self-edges are not allowed")
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class CommNetwork:
    nodes: frozenset[str]
    edges: Mapping[Edge, int]
    scope: Scope = field(default_factory=Scope)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def weight(self, a: str, b: str) -> int:
        return self.edges.get(edge_key(a, b), 0)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(sorted(self.nodes))
        g.add_weighted_edges_from((a, b, w) for (a, b), w in sorted(self.edges.items()))
        return g

    def same_structure(self, other: "CommNetwork") -> bool:
        return self.nodes == other.nodes and dict(self.edges) == dict(other.edges)

    def write(self, directory: str | Path, extra_meta: Mapping | None = None) -> None:
        """Write ``edges.csv``, ``nodes.csv`` (isolates included) and ``meta.json``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "edges.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["learner_a", "learner_b", "weight"])
            for (a, b), weight in sorted(self.edges.items()):
                w.writerow([a, b, weight])
        with open(out / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["learner_id", "degree"])
            deg = degree_sequence(self)
            for node in sorted(self.nodes):
                w.writerow([node, deg[node]])
        meta = {"scope": self.scope.to_dict(), "n_nodes": self.n_nodes, "n_edges": self.n_edges}
        meta.update(extra_meta or {})
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_network(directory: str | Path) -> CommNetwork:
    src = Path(directory)
    with open(src / "nodes.csv", newline="", encoding="utf-8") as fh:
        nodes = frozenset(row["learner_id"] for row in csv.DictReader(fh))
    with open(src / "edges.csv", newline="", encoding="utf-8") as fh:
        edges = {edge_key(r["learner_a"], r["learner_b"]): int(r["weight"]) for r in csv.DictReader(fh)}
    meta = json.loads((src / "meta.json").read_text())
    w = meta["scope"]["window"]
    sf = meta["scope"]["subforum"]
    scope = Scope(
        window=None if w is None else Window(w["index"], w["start"], w["end"]),
        subforum=None if sf == "all" else sf,
    )
    return CommNetwork(nodes, edges, scope)


def window_slices(log: EventLog, width: int) -> list[Window]:
    """Tile the course interval with windows of ``width`` seconds; the last one is truncated."""
    if width <= 0:
        raise ValueError("width must be positive")
    start, end = log.course_interval
    n = math.ceil((end - start) / width)
    return [Window(i, start + i * width, min(start + (i + 1) * width, end)) for i in range(n)]


def thread_participants(log: EventLog, scope: Scope = Scope()) -> dict[str, set[str]]:
    """Map thread → learners who posted or commented in it within ``scope``."""
    threads: dict[str, set[str]] = defaultdict(set)
    for e in log.contributions():
        if scope.matches(e):
            threads[e.thread].add(e.learner)
    return dict(threads)


def network_from_threads(threads: Mapping[str, Iterable[str]], scope: Scope = Scope()) -> CommNetwork:
    nodes: set[str] = set()
    edges: dict[Edge, int] = defaultdict(int)
    for members in threads.values():
        members = sorted(set(members))
        nodes.update(members)
        for a, b in combinations(members, 2):
            edges[(a, b)] += 1
    return CommNetwork(frozenset(nodes), dict(edges), scope)


def build_conetwork(log: EventLog, scope: Scope | None = None, *, window: Window | None = None,
                    subforum: str | None = None) -> CommNetwork:
    """Co-posting network for one scope.

    A learner belongs to a windowed network only if their post/comment event
    itself falls inside the window.
    """
    if scope is None:
        scope = Scope(window=window, subforum=subforum)
    if scope.window is not None:
        start, end = log.course_interval
        if scope.window.start < start or scope.window.end > end:
            raise ValueError("scope window lies outside the course interval")
    return network_from_threads(thread_participants(log, scope), scope)


def degree_sequence(net: CommNetwork) -> dict[str, int]:
    deg = {n: 0 for n in net.nodes}
    for a, b in net.edges:
        deg[a] += 1
        deg[b] += 1
    return deg
