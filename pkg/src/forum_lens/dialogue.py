"""Human-coded forum responses: schema, loading, agreement, code distributions.

The unit of coding is a whole response, i.e. one post or comment event.
"""

from __future__ import annotations

import functools
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .data import EventLog, LogValidationError, RowIssue, Source, _iter_rows
from .network import window_slices

CODE_COLUMNS = ("post_id", "coder", "phase", "intent", "topic")
DIMENSIONS = ("phase", "intent")


@functools.total_ordering
class KnowledgePhase(Enum):
    """Knowledge-construction level. NONE is outside the I < II < ... < V order."""

    NONE = "none"
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"

    @property
    def rank(self) -> int | None:
        return None if self is KnowledgePhase.NONE else ("I", "II", "III", "IV", "V").index(self.value) + 1

    def __lt__(self, other):
        if not isinstance(other, KnowledgePhase):
            return NotImplemented
        if self.rank is None or other.rank is None:
            raise TypeError("phase 'none' is not ordered relative to phases I-V")
        return self.rank < other.rank

    @classmethod
    def parse(cls, token: str) -> "KnowledgePhase":
        text = token.strip()
        for p in cls:
            if text == p.value or text.lower() == p.value.lower():
                return p
        raise ValueError(f"unknown phase {token!r}; expected one of {[p.value for p in cls]}")


# Phase I name is the one the coding scheme fixes; the rest come from config.
DEFAULT_PHASE_NAMES = {KnowledgePhase.NONE: "no learning", KnowledgePhase.I: "sharing/comparing of information"}


@dataclass(frozen=True)
class PhaseSchema:
    names: Mapping[KnowledgePhase, str] = field(default_factory=lambda: dict(DEFAULT_PHASE_NAMES))

    @classmethod
    def from_config(cls, section: Mapping[str, str]) -> "PhaseSchema":
        names = dict(DEFAULT_PHASE_NAMES)
        for key, value in section.items():
            names[KnowledgePhase.parse(key)] = value
        return cls(names)

    def label(self, phase: KnowledgePhase) -> str:
        name = self.names.get(phase)
        return f"{phase.value} ({name})" if name else phase.value


class Intent(str, Enum):
    ARGUMENTATIVE = "argumentative"
    RESPONSIVE = "responsive"
    INFORMATIVE = "informative"
    ELICITIVE = "elicitive"
    IMPERATIVE = "imperative"

    @classmethod
    def parse(cls, token: str) -> "Intent":
        try:
            return cls(token.strip())
        except ValueError:
            valid = ", ".join(i.value for i in cls)
            raise ValueError(f"unknown intent {token!r}; valid intents: {valid}") from None


@dataclass(frozen=True)
class CodedResponse:
    post: str
    coder: str
    phase: KnowledgePhase
    intent: Intent
    topic: str = ""

    def value(self, dimension: str):
        if dimension == "phase":
            return self.phase
        if dimension == "intent":
            return self.intent
        if dimension == "topic":
            return self.topic
        raise ValueError(f"unknown dimension {dimension!r}")


@dataclass(frozen=True)
class CodedCorpus:
    responses: tuple[CodedResponse, ...]

    @property
    def coders(self) -> list[str]:
        return sorted({r.coder for r in self.responses})

    def by_coder(self, coder: str) -> dict[str, CodedResponse]:
        return {r.post: r for r in self.responses if r.coder == coder}

    def __len__(self) -> int:
        return len(self.responses)


def load_codes(file: Source, log: EventLog, *, fmt: str | None = None) -> CodedCorpus:
    label, rows, _ = _iter_rows(file, fmt)
    events = log.event_index()
    issues: list[RowIssue] = []
    seen: dict[tuple[str, str], int] = {}
    out = []
    for lineno, row in rows:
        get = lambda k: "" if row.get(k) is None else str(row[k]).strip()
        post, coder = get("post_id"), get("coder")
        bad = False
        if not post:
            issues.append(RowIssue(lineno, "post_id", "must be non-empty"))
            bad = True
        elif post not in events:
            issues.append(RowIssue(lineno, "post_id", f"unresolvable post {post!r}"))
            bad = True
        elif not events[post].is_contribution:
            issues.append(RowIssue(lineno, "post_id", f"{post!r} is a {events[post].kind.value} event; only posts/comments are coded"))
            bad = True
        if not coder:
            issues.append(RowIssue(lineno, "coder", "must be non-empty"))
            bad = True
        try:
            phase = KnowledgePhase.parse(get("phase"))
        except ValueError as exc:
            issues.append(RowIssue(lineno, "phase", str(exc)))
            bad = True
        try:
            intent = Intent.parse(get("intent"))
        except ValueError as exc:
            issues.append(RowIssue(lineno, "intent", str(exc)))
            bad = True
        if bad:
            continue
        key = (post, coder)
        if key in seen:
            issues.append(RowIssue(lineno, "coder", f"duplicate code for post {post!r} by coder {coder!r} (first on line {seen[key]})"))
            continue
        seen[key] = lineno
        out.append(CodedResponse(post, coder, phase, intent, get("topic")))
    if issues:
        raise LogValidationError(label, issues)
    return CodedCorpus(tuple(sorted(out, key=lambda r: (r.post, r.coder))))


@dataclass(frozen=True)
class Agreement:
    kappa: float
    observed: float
    expected: float
    n: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "observed": self.observed, "expected": self.expected,
                "n": self.n, "degenerate": self.degenerate}


def cohen_kappa(labels_a: Sequence, labels_b: Sequence) -> Agreement:
    if len(labels_a) != len(labels_b):
        raise ValueError("label sequences differ in length")
    n = len(labels_a)
    if n == 0:
        raise ValueError("no jointly coded items")
    p_o = sum(a == b for a, b in zip(labels_a, labels_b)) / n
    ca, cb = Counter(labels_a), Counter(labels_b)
    p_e = sum(ca[k] * cb[k] for k in ca) / (n * n)
    if p_e >= 1.0:
        # both coders used one identical label throughout
        return Agreement(1.0, p_o, p_e, n, degenerate=True)
    return Agreement((p_o - p_e) / (1.0 - p_e), p_o, p_e, n)


def agreement(corpus: CodedCorpus, coder_a: str, coder_b: str, dimension: str = "intent") -> Agreement:
    """Cohen's kappa between two coders over the posts both of them coded."""
    if dimension not in DIMENSIONS:
        raise ValueError(f"dimension must be one of {DIMENSIONS}")
    a, b = corpus.by_coder(coder_a), corpus.by_coder(coder_b)
    shared = sorted(set(a) & set(b))
    if not shared:
        raise ValueError(f"coders {coder_a!r} and {coder_b!r} share no coded posts")
    return cohen_kappa([a[p].value(dimension) for p in shared], [b[p].value(dimension) for p in shared])


UNRESOLVED = "unresolved"


def resolve_labels(corpus: CodedCorpus, dimension: str, coder: str | None = None,
                   majority: bool = False) -> dict[str, object]:
    """One label per post, from a named coder or by explicit majority vote.

    Majority ties become ``"unresolved"``; nothing is resolved implicitly, so
    a multi-coder corpus without ``coder`` or ``majority`` is an error.
    """
    if coder is not None and majority:
        raise ValueError("choose either a coder or majority resolution, not both")
    if coder is not None:
        return {p: r.value(dimension) for p, r in corpus.by_coder(coder).items()}
    if len(corpus.coders) <= 1:
        return {r.post: r.value(dimension) for r in corpus.responses}
    if not majority:
        raise ValueError("corpus has several coders; pass coder=... or majority=True")
    votes: dict[str, Counter] = defaultdict(Counter)
    for r in corpus.responses:
        votes[r.post][r.value(dimension)] += 1
    out = {}
    for post, counter in votes.items():
        ranked = counter.most_common()
        if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
            out[post] = UNRESOLVED
        else:
            out[post] = ranked[0][0]
    return out


def _label(value) -> str:
    return value.value if isinstance(value, Enum) else str(value)


@dataclass(frozen=True)
class DistributionRow:
    group: str
    dimension: str
    value: str
    count: int
    fraction: float


def code_distribution(corpus: CodedCorpus, log: EventLog, group_by: str = "subforum", *,
                      coder: str | None = None, majority: bool = False,
                      dimensions: Sequence[str] = DIMENSIONS, width: int = 7 * 86400) -> list[DistributionRow]:
    """Counts and within-group fractions of each code value.

    ``group_by`` is ``subforum``, ``window`` (course-aligned slices of
    ``width`` seconds) or ``learner``.
    """
    if group_by not in ("subforum", "window", "learner"):
        raise ValueError("group_by must be subforum, window or learner")
    if not corpus.responses:
        return []
    events = log.event_index()
    windows = window_slices(log, width) if group_by == "window" else []

    def group_of(post: str) -> str:
        e = events[post]
        if group_by == "subforum":
            return e.subforum
        if group_by == "learner":
            return e.learner
        for w in windows:
            if w.contains(e.timestamp):
                return f"w{w.index:02d}"
        raise ValueError(f"post {post!r} falls outside every window")

    rows: list[DistributionRow] = []
    for dim in dimensions:
        labels = resolve_labels(corpus, dim, coder=coder, majority=majority)
        counts: dict[str, Counter] = defaultdict(Counter)
        for post, value in labels.items():
            counts[group_of(post)][_label(value)] += 1
        for group in sorted(counts):
            total = sum(counts[group].values())
            for value in sorted(counts[group]):
                c = counts[group][value]
                rows.append(DistributionRow(group, dim, value, c, c / total))
    return rows
