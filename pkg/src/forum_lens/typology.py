"""Learner typology via Bayesian NMF with automatic relevance determination.

Model (MAP, squared error): A ~ W H with half-normal priors of precision
beta_k shared by column k of W and row k of H, and Gamma(a, b) hyperpriors
on beta_k. The minimized objective is::

    J = 1/2 ||A - W H||^2
        + sum_k [ beta_k/2 (||W_:k||^2 + ||H_k:||^2) + b beta_k
                  - ((N + M)/2 + a) log beta_k ]

H and W take multiplicative (majorize-minimize) steps and beta_k its exact
minimizer ``(N + M + 2a) / (||W_:k||^2 + ||H_k:||^2 + 2b)``, so J never
increases. Superfluous components are driven to zero energy and pruned.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import EventLog, Kind
from .dialogue import CodedCorpus, Intent, KnowledgePhase, resolve_labels
from .seeding import derive_seed

logger = logging.getLogger(__name__)

BEHAVIOUR_FEATURES = ("posts", "comments", "threads", "views", "votes")
PRUNE_RATIO = 1e-8
DEFAULT_A = 1e-3
DEFAULT_B = 1e-3
_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class FeatureConfig:
    behaviours: tuple[str, ...] = BEHAVIOUR_FEATURES
    # None: add phase/intent counts whenever a corpus is supplied
    code_dimensions: tuple[str, ...] | None = None
    coder: str | None = None
    majority: bool = False

    def __post_init__(self):
        unknown = set(self.behaviours) - set(BEHAVIOUR_FEATURES)
        if unknown:
            raise ValueError(f"unknown behaviour features {sorted(unknown)}")
        if self.code_dimensions is not None:
            bad = set(self.code_dimensions) - {"phase", "intent"}
            if bad:
                raise ValueError(f"unknown code dimensions {sorted(bad)}")


@dataclass(frozen=True)
class FeatureMatrix:
    rows: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    excluded: tuple[str, ...] = ()

    def __post_init__(self):
        if self.values.shape != (len(self.rows), len(self.columns)):
            raise ValueError("values shape does not match rows x columns")
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if (self.values < 0).any():
            raise ValueError("feature values must be nonnegative")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def row(self, learner: str) -> np.ndarray:
        return self.values[self.rows.index(learner)]

    def scaled(self) -> "FeatureMatrix":
        """Each column divided by its mean (all-zero columns left as zeros)."""
        means = self.values.mean(axis=0)
        safe = np.where(means > 0, means, 1.0)
        return FeatureMatrix(self.rows, self.columns, self.values / safe, self.excluded)


def build_feature_matrix(log: EventLog, corpus: CodedCorpus | None = None,
                         config: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    dims = config.code_dimensions
    if dims is None:
        dims = ("intent", "phase") if corpus is not None else ()
    elif dims and corpus is None:
        raise ValueError("feature config requests code-count columns but no coded corpus was given")

    counts: dict[str, Counter] = defaultdict(Counter)
    threads: dict[str, set[str]] = defaultdict(set)
    for e in log.events:
        c = counts[e.learner]
        if e.kind is Kind.POST:
            c["posts"] += 1
        elif e.kind is Kind.COMMENT:
            c["comments"] += 1
        elif e.kind is Kind.VIEW:
            c["views"] += 1
        elif e.kind is Kind.VOTE:
            c["votes"] += 1
        if e.is_contribution:
            threads[e.learner].add(e.thread)
    for learner, ts in threads.items():
        counts[learner]["threads"] = len(ts)

    columns = list(config.behaviours)
    events = log.event_index()
    for dim in dims:
        values = [p.value for p in KnowledgePhase] if dim == "phase" else [i.value for i in Intent]
        labels = resolve_labels(corpus, dim, coder=config.coder, majority=config.majority)
        for post, label in labels.items():
            if not hasattr(label, "value"):
                continue  # unresolved majority tie
            counts[events[post].learner][f"{dim}:{label.value}"] += 1
        columns.extend(f"{dim}:{v}" for v in values)

    rows, data, excluded = [], [], []
    for learner in sorted(counts):
        vec = [float(counts[learner][col]) for col in columns]
        if not any(vec):
            excluded.append(learner)
            continue
        rows.append(learner)
        data.append(vec)
    if excluded:
        logger.info("%d learner(s) excluded with all-zero feature rows", len(excluded))
    values = np.array(data, dtype=float).reshape(len(rows), len(columns))
    return FeatureMatrix(tuple(rows), tuple(columns), values, tuple(excluded))


@dataclass(frozen=True)
class Factorization:
    W: np.ndarray
    H: np.ndarray
    relevance: np.ndarray
    active: tuple[int, ...]
    objective_trace: list[float]
    seed: int
    iterations: int
    converged: bool
    hyperparams: dict = field(default_factory=dict)
    rows: tuple[str, ...] = ()
    columns: tuple[str, ...] = ()

    @property
    def k_max(self) -> int:
        return self.W.shape[1]

    def reconstruction(self) -> np.ndarray:
        return self.W @ self.H

    def energies(self) -> np.ndarray:
        return (self.W ** 2).sum(axis=0) + (self.H ** 2).sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "k_max": self.k_max,
            "active": list(self.active),
            "relevance": self.relevance.tolist(),
            "objective_trace": self.objective_trace,
            "iterations": self.iterations,
            "converged": self.converged,
            "seed": self.seed,
            "hyperparams": self.hyperparams,
        }


def bnmf_objective(A: np.ndarray, W: np.ndarray, H: np.ndarray, beta: np.ndarray, a: float, b: float) -> float:
    N, M = A.shape
    energy = (W ** 2).sum(axis=0) + (H ** 2).sum(axis=1)
    data = 0.5 * float(((A - W @ H) ** 2).sum())
    prior = float((0.5 * beta * energy + b * beta - ((N + M) / 2 + a) * np.log(beta)).sum())
    return data + prior


def _fit(A: np.ndarray, K: int, a: float, b: float, max_iters: int, tol: float, seed: int):
    N, M = A.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(A.mean(), _TINY) / K)
    W = rng.uniform(0.0, 1.0, size=(N, K)) * scale + _TINY
    H = rng.uniform(0.0, 1.0, size=(K, M)) * scale + _TINY
    beta = (N + M + 2 * a) / ((W ** 2).sum(0) + (H ** 2).sum(1) + 2 * b)
    trace = [bnmf_objective(A, W, H, beta, a, b)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        H *= (W.T @ A) / (W.T @ W @ H + beta[:, None] * H + _TINY)
        W *= (A @ H.T) / (W @ (H @ H.T) + W * beta[None, :] + _TINY)
        beta = (N + M + 2 * a) / ((W ** 2).sum(0) + (H ** 2).sum(1) + 2 * b)
        trace.append(bnmf_objective(A, W, H, beta, a, b))
        prev, cur = trace[-2], trace[-1]
        if abs(prev - cur) < tol * max(abs(prev), 1.0):
            converged = True
            break
    return W, H, beta, trace, it, converged


def bnmf(A, k_max: int | None = None, a: float = DEFAULT_A, b: float = DEFAULT_B, max_iters: int = 20000,
         tol: float = 1e-10, seed: int = 0, restarts: int = 1) -> Factorization:
    """Fit ARD-BNMF; with ``restarts > 1`` keep the lowest final objective.

    Restart ``r`` is seeded with ``derive_seed(seed, "bnmf", r)``.
    """
    rows = columns = ()
    if isinstance(A, FeatureMatrix):
        rows, columns, A = A.rows, A.columns, A.values
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("A must be a 2-D matrix")
    if (A < 0).any():
        raise ValueError("A has negative entries")
    N, M = A.shape
    if k_max is None:
        k_max = min(20, N, M)
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if k_max > min(N, M):
        raise ValueError(f"k_max={k_max} exceeds min(N, M)={min(N, M)}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    best = None
    best_seed = None
    for r in range(restarts):
        sub = derive_seed(seed, "bnmf", r)
        fit = _fit(A, k_max, a, b, max_iters, tol, sub)
        if best is None or fit[3][-1] < best[3][-1]:
            best, best_seed = fit, sub
    W, H, beta, trace, iters, converged = best
    energy = (W ** 2).sum(0) + (H ** 2).sum(1)
    active = tuple(int(k) for k in np.flatnonzero(energy >= PRUNE_RATIO * energy.sum()))
    return Factorization(
        W=W, H=H, relevance=beta, active=active, objective_trace=[float(x) for x in trace],
        seed=best_seed, iterations=iters, converged=converged,
        hyperparams={"a": a, "b": b, "k_max": k_max, "max_iters": max_iters, "tol": tol,
                     "restarts": restarts, "root_seed": seed, "prune_ratio": PRUNE_RATIO},
        rows=tuple(rows), columns=tuple(columns),
    )


@dataclass(frozen=True)
class TypeAssignment:
    learners: tuple[str, ...]
    types: np.ndarray  # position within ``components``
    strengths: np.ndarray  # learners x active, rows sum to 1
    components: tuple[int, ...]

    def type_of(self, learner: str) -> int:
        return int(self.types[self.learners.index(learner)])

    def strength_of(self, learner: str) -> float:
        i = self.learners.index(learner)
        return float(self.strengths[i, self.types[i]])

    def as_dict(self) -> dict[str, int]:
        return {l: int(t) for l, t in zip(self.learners, self.types)}


def assign_types(f: Factorization) -> TypeAssignment:
    """Dominant active component per learner; ties go to the lowest index."""
    if not f.active:
        raise ValueError("factorization has no active components")
    Wa = f.W[:, list(f.active)]
    sums = Wa.sum(axis=1, keepdims=True)
    k = Wa.shape[1]
    strengths = np.divide(Wa, sums, out=np.full_like(Wa, 1.0 / k), where=sums > 0)
    types = np.argmax(strengths, axis=1)
    learners = f.rows or tuple(str(i) for i in range(f.W.shape[0]))
    return TypeAssignment(tuple(learners), types, strengths, f.active)


AGE_BANDS = ((0, 25, "<25"), (25, 35, "25-34"), (35, 45, "35-44"), (45, 55, "45-54"), (55, 200, "55+"))
COUNT_BANDS = ((0, 1, "0"), (1, 2, "1"), (2, 6, "2-5"), (6, 21, "6-20"), (21, 10 ** 12, "21+"))
UNKNOWN = "unknown"


def _band(value, bands) -> str:
    if value is None:
        return UNKNOWN
    for lo, hi, name in bands:
        if lo <= value < hi:
            return name
    return UNKNOWN


def _flag(value: bool | None) -> str:
    return UNKNOWN if value is None else str(value).lower()


@dataclass(frozen=True)
class ProfileRow:
    type: int
    variable: str
    level: str
    count: int
    fraction: float


PROFILE_VARIABLES = ("education", "country", "age_band", "submitted_final", "passed", "posts", "views")


def profile_types(t: TypeAssignment, log: EventLog) -> list[ProfileRow]:
    """Per-type counts and within-type fractions of demographics, outcomes and activity bands."""
    posts = Counter(e.learner for e in log.contributions())
    views = Counter(e.learner for e in log.events if e.kind is Kind.VIEW)
    tallies: dict[tuple[int, str], Counter] = defaultdict(Counter)
    sizes: Counter = Counter()
    for learner, typ in zip(t.learners, t.types.tolist()):
        rec = log.learners.get(learner)
        sizes[typ] += 1
        levels = {
            "education": UNKNOWN if rec is None or rec.education is None else str(rec.education),
            "country": UNKNOWN if rec is None or rec.country is None else rec.country,
            "age_band": _band(None if rec is None else rec.age, AGE_BANDS),
            "submitted_final": _flag(None if rec is None else rec.submitted_final),
            "passed": _flag(None if rec is None else rec.passed),
            "posts": _band(posts[learner], COUNT_BANDS),
            "views": _band(views[learner], COUNT_BANDS),
        }
        for var, level in levels.items():
            tallies[(typ, var)][level] += 1
    rows = []
    for typ in sorted(sizes):
        for var in PROFILE_VARIABLES:
            for level, c in sorted(tallies[(typ, var)].items()):
                rows.append(ProfileRow(typ, var, level, c, c / sizes[typ]))
    return rows
