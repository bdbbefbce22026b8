"""Significance filtering of co-posting edges against a fixed-degree bipartite null.

The observed learner–thread participation graph is the evidence; the null
keeps every learner's thread count ``d_i`` and every thread's poster count
``k_t`` and otherwise shuffles who posted where. Two routes are provided:

* analytic: shared-thread count of a pair is hypergeometric when learner
  ``i`` draws ``d_i`` of the ``T`` threads uniformly without replacement,
  independently of ``j``. This ignores thread sizes, so it is a close but
  not identical approximation of the fixed-degree null.
* Monte Carlo: degree-preserving edge-swap randomization of the bipartite
  graph, projected to co-posting networks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import hypergeom

from .data import EventLog
from .network import CommNetwork, Edge, Scope, network_from_threads, thread_participants
from .seeding import derive_seed

logger = logging.getLogger(__name__)

SWAPS_PER_EDGE = 10
MIN_REPORTABLE_SAMPLES = 100


@dataclass(frozen=True)
class BipartiteIncidence:
    """Learner → threads participated in, within one scope."""

    memberships: Mapping[str, frozenset[str]]
    scope: Scope = field(default_factory=Scope)

    def __post_init__(self):
        for learner, threads in self.memberships.items():
            if not threads:
                raise ValueError(f"learner {learner!r} has no threads")

    @classmethod
    def from_log(cls, log: EventLog, scope: Scope = Scope()) -> "BipartiteIncidence":
        return cls.from_threads(thread_participants(log, scope), scope)

    @classmethod
    def from_threads(cls, threads: Mapping[str, Iterable[str]], scope: Scope = Scope()) -> "BipartiteIncidence":
        memberships: dict[str, set[str]] = {}
        for t, members in threads.items():
            for learner in members:
                memberships.setdefault(learner, set()).add(t)
        return cls({k: frozenset(v) for k, v in sorted(memberships.items())}, scope)

    @property
    def learner_degrees(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.memberships.items()}

    def thread_members(self) -> dict[str, set[str]]:
        threads: dict[str, set[str]] = {}
        for learner, ts in self.memberships.items():
            for t in ts:
                threads.setdefault(t, set()).add(learner)
        return dict(sorted(threads.items()))

    @property
    def thread_sizes(self) -> dict[str, int]:
        return {t: len(m) for t, m in self.thread_members().items()}

    @property
    def n_threads(self) -> int:
        return len(self.thread_members())

    @property
    def n_links(self) -> int:
        return sum(len(v) for v in self.memberships.values())

    def project(self) -> CommNetwork:
        return network_from_threads(self.thread_members(), self.scope)


@dataclass(frozen=True)
class EdgeSignificance:
    weight: int
    expected: float
    p_value: float
    method: str


def hypergeom_pvalue(w: int, d_i: int, d_j: int, n_threads: int) -> float:
    """P(W >= w) for W ~ Hypergeometric(population T, successes d_j, draws d_i)."""
    if n_threads <= 0:
        raise ValueError("thread count T must be positive")
    if d_i > n_threads or d_j > n_threads:
        raise ValueError(f"inconsistent incidence: degree exceeds T={n_threads}")
    if w <= 0:
        return 1.0
    return float(min(1.0, max(0.0, hypergeom.sf(w - 1, n_threads, d_j, d_i))))


def edge_significance_analytic(inc: BipartiteIncidence, net: CommNetwork) -> dict[Edge, EdgeSignificance]:
    T = inc.n_threads
    if T == 0:
        raise ValueError("incidence has no threads (T = 0)")
    deg = inc.learner_degrees
    out = {}
    for (a, b), w in sorted(net.edges.items()):
        if a not in deg or b not in deg:
            raise ValueError(f"edge ({a}, {b}) not covered by the incidence; build both from the same scope")
        out[(a, b)] = EdgeSignificance(
            weight=w,
            expected=deg[a] * deg[b] / T,
            p_value=hypergeom_pvalue(w, deg[a], deg[b], T),
            method="analytic",
        )
    return out


@dataclass(frozen=True)
class NullEnsemble:
    networks: list[CommNetwork]
    incidences: list[BipartiteIncidence]
    seed: int
    swaps: int
    degenerate: bool

    def __len__(self) -> int:
        return len(self.networks)

    def __iter__(self):
        return iter(self.networks)

    def metadata(self) -> dict:
        return {
            "replicates": len(self.networks),
            "seed": self.seed,
            "swaps_per_replicate": self.swaps,
            "degenerate": self.degenerate,
        }


def has_valid_swap(inc: BipartiteIncidence) -> bool:
    """True when some (l1,t1),(l2,t2) can be rewired to (l1,t2),(l2,t1)."""
    members = list(inc.thread_members().values())
    for i, a in enumerate(members):
        for b in members[i + 1:]:
            if a - b and b - a:
                return True
    return False


def _swap_chain(learner_of: np.ndarray, thread_of: np.ndarray, n_learners: int, n_swaps: int,
                rng: np.random.Generator) -> np.ndarray:
    """Run ``n_swaps`` swap attempts in place; returns the final thread column."""
    threads = thread_of.copy()
    owned = [set() for _ in range(n_learners)]
    for l, t in zip(learner_of.tolist(), threads.tolist()):
        owned[l].add(t)
    E = len(threads)
    picks = rng.integers(0, E, size=(n_swaps, 2)).tolist()
    learners = learner_of.tolist()
    th = threads.tolist()
    for x, y in picks:
        l1, l2 = learners[x], learners[y]
        t1, t2 = th[x], th[y]
        if l1 == l2 or t1 == t2 or t2 in owned[l1] or t1 in owned[l2]:
            continue
        owned[l1].remove(t1)
        owned[l1].add(t2)
        owned[l2].remove(t2)
        owned[l2].add(t1)
        th[x], th[y] = t2, t1
    return np.asarray(th)


def sample_null_networks(inc: BipartiteIncidence, replicates: int, seed: int,
                         swaps_per_link: int = SWAPS_PER_EDGE) -> NullEnsemble:
    """Degree-preserving randomizations of the learner–thread graph, projected.

    Each replicate is an independent chain started from the observed graph
    with ``swaps_per_link * E`` swap attempts, seeded by
    ``derive_seed(seed, "null", r)``.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    learners = list(inc.memberships)
    thread_ids = sorted({t for ts in inc.memberships.values() for t in ts})
    lidx = {l: i for i, l in enumerate(learners)}
    tidx = {t: i for i, t in enumerate(thread_ids)}
    pairs = [(lidx[l], tidx[t]) for l in learners for t in sorted(inc.memberships[l])]
    learner_of = np.array([p[0] for p in pairs], dtype=np.int64)
    thread_of = np.array([p[1] for p in pairs], dtype=np.int64)
    n_swaps = swaps_per_link * len(pairs)

    degenerate = not has_valid_swap(inc)
    if degenerate:
        logger.warning("no valid swap exists for scope %s; null replicates equal the observed graph", inc.scope.label)

    networks, incidences = [], []
    for r in range(replicates):
        if degenerate:
            sample = inc
        else:
            rng = np.random.default_rng(derive_seed(seed, "null", r))
            new_threads = _swap_chain(learner_of, thread_of, len(learners), n_swaps, rng)
            memberships: dict[str, set[str]] = {l: set() for l in learners}
            for l, t in zip(learner_of.tolist(), new_threads.tolist()):
                memberships[learners[l]].add(thread_ids[t])
            sample = BipartiteIncidence({k: frozenset(v) for k, v in memberships.items()}, inc.scope)
        incidences.append(sample)
        networks.append(sample.project())
    return NullEnsemble(networks, incidences, seed, 0 if degenerate else n_swaps, degenerate)


def edge_significance_montecarlo(net: CommNetwork, samples: Sequence[CommNetwork] | NullEnsemble
                                 ) -> dict[Edge, EdgeSignificance]:
    """Add-one smoothed empirical p-value: (1 + #{w_s >= w}) / (1 + S)."""
    samples = list(samples)
    S = len(samples)
    if S == 0:
        raise ValueError("need at least one null sample")
    if S < MIN_REPORTABLE_SAMPLES:
        logger.warning("only %d null samples; p-values below %d samples are not reportable", S, MIN_REPORTABLE_SAMPLES)
    out = {}
    for edge, w in sorted(net.edges.items()):
        sample_w = np.fromiter((s.edges.get(edge, 0) for s in samples), dtype=np.int64, count=S)
        out[edge] = EdgeSignificance(
            weight=w,
            expected=float(sample_w.mean()),
            p_value=(1 + int((sample_w >= w).sum())) / (1 + S),
            method="montecarlo",
        )
    return out


@dataclass(frozen=True)
class Backbone:
    network: CommNetwork
    alpha: float
    correction: str | None
    retained: int
    tested: int

    @property
    def retention(self) -> float:
        return self.retained / self.tested if self.tested else 1.0


def filter_backbone(net: CommNetwork, sig: Mapping[Edge, EdgeSignificance], alpha: float = 0.05,
                    correction: str | None = None) -> Backbone:
    """Keep edges with (optionally Bonferroni-adjusted) p <= alpha; every node survives."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if correction not in (None, "bonferroni"):
        raise ValueError(f"unknown correction {correction!r}")
    missing = set(net.edges) - set(sig)
    if missing:
        raise ValueError(f"significance missing for {len(missing)} edge(s), e.g. {sorted(missing)[0]}")
    m = len(net.edges)
    kept = {}
    for edge, w in net.edges.items():
        p = sig[edge].p_value
        if correction == "bonferroni":
            p = min(1.0, p * m)
        # alpha = 0 keeps nothing, even a p-value that underflowed to 0
        if alpha > 0 and p <= alpha:
            kept[edge] = w
    return Backbone(CommNetwork(net.nodes, kept, net.scope), alpha, correction, len(kept), m)
