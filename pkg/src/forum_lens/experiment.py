"""Thread-recommendation email experiment: 16 treatment arms, selection, composition, engagement.

Groups cross three factors: introduction (social / normal), body (with /
without previews) and thread selection (four methods). The index bijection
onto 0..15 is intro-major, body-middle, selection-minor.

Nothing here sends email; the module stops at emitting email specs and
analysing open/click logs.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import IO, Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.stats import norm

from .data import EventLog, Kind, LogValidationError, RowIssue, Source, _iter_rows, parse_timestamp
from .seeding import derive_seed, hash64

INTROS = ("social", "normal")
BODIES = ("with_preview", "without_preview")
SELECTIONS = ("random", "random_no_intro", "most_popular", "highest_reputation")
N_GROUPS = len(INTROS) * len(BODIES) * len(SELECTIONS)
EMAIL_THREADS = 5
MAX_SOCIAL_NAMES = 3
ACTIVE_WINDOW = 7 * 86400
EMAIL_LOG_COLUMNS = ("recipient", "week", "group_index", "sent_at", "opened", "clicked_thread_ids")


@dataclass(frozen=True, order=True)
class TreatmentGroup:
    intro: str
    body: str
    selection: str

    def __post_init__(self):
        if self.intro not in INTROS or self.body not in BODIES or self.selection not in SELECTIONS:
            raise ValueError(f"invalid treatment group {self!r}")

    @property
    def index(self) -> int:
        return (INTROS.index(self.intro) * len(BODIES) + BODIES.index(self.body)) * len(SELECTIONS) \
            + SELECTIONS.index(self.selection)

    @classmethod
    def from_index(cls, index: int) -> "TreatmentGroup":
        if not 0 <= index < N_GROUPS:
            raise ValueError(f"group index must lie in 0..{N_GROUPS - 1}")
        rest, sel = divmod(index, len(SELECTIONS))
        intro, body = divmod(rest, len(BODIES))
        return cls(INTROS[intro], BODIES[body], SELECTIONS[sel])

    def factor(self, name: str) -> str:
        return getattr(self, name)


def all_groups() -> list[TreatmentGroup]:
    return [TreatmentGroup(i, b, s) for i, b, s in product(INTROS, BODIES, SELECTIONS)]


def assign_treatments(learners: Iterable[str], seed: int) -> dict[str, TreatmentGroup]:
    """Group index = hash64(seed, learner) mod 16 (BLAKE2b-64, see ``seeding``).

    A pure function of (seed, learner): late enrollees need no coordination
    and a learner keeps the same arm every week. Arms are balanced only in
    expectation.
    """
    learners = list(learners)
    if not learners:
        raise ValueError("learner list is empty")
    return {l: TreatmentGroup.from_index(hash64(int(seed), l) % N_GROUPS) for l in learners}


# --------------------------------------------------------------------------
# thread selection


@dataclass(frozen=True)
class ThreadSelection:
    threads: list[str]
    method: str
    shortfall: bool


def _first_posts(log: EventLog) -> dict[str, object]:
    first = {}
    for e in log.events:
        if e.kind is Kind.POST and e.thread not in first:
            first[e.thread] = e
    return first


def upvotes_received(log: EventLog, before: int | None = None) -> Counter:
    """Upvotes credited to authors across the whole forum.

    A vote goes to the author of its target post; votes without a target go
    to the thread starter.
    """
    events = log.event_index()
    first = _first_posts(log)
    received: Counter = Counter()
    for e in log.events:
        if e.kind is not Kind.VOTE or e.vote_delta != 1:
            continue
        if before is not None and e.timestamp >= before:
            continue
        author = events[e.target].learner if e.target else first[e.thread].learner
        received[author] += 1
    return received


def select_threads(log: EventLog, as_of: int, method: str, n: int = EMAIL_THREADS, seed: int = 0, *,
                   intro_subforums: Iterable[str] = ("introductions",),
                   active_window: int = ACTIVE_WINDOW) -> ThreadSelection:
    """Pick ``n`` threads active in ``[as_of - active_window, as_of)``.

    Popularity is the thread's post+comment count before ``as_of``;
    reputation sums, over the thread's participants, the upvotes each
    received anywhere in the forum before ``as_of``. Deterministic methods
    break ties by thread ID.
    """
    if method not in SELECTIONS:
        raise ValueError(f"unknown selection method {method!r}")
    intro = set(intro_subforums)
    posts: Counter = Counter()
    participants: dict[str, set[str]] = defaultdict(set)
    subforum: dict[str, str] = {}
    active = set()
    for e in log.events:
        if e.timestamp >= as_of or not e.is_contribution:
            continue
        posts[e.thread] += 1
        participants[e.thread].add(e.learner)
        subforum[e.thread] = e.subforum
        if e.timestamp >= as_of - active_window:
            active.add(e.thread)

    eligible = sorted(active)
    if method == "random_no_intro":
        eligible = [t for t in eligible if subforum[t] not in intro]
    k = min(n, len(eligible))
    if method in ("random", "random_no_intro"):
        rng = np.random.default_rng(derive_seed(seed, "select", method, as_of))
        chosen = [eligible[i] for i in rng.choice(len(eligible), size=k, replace=False)] if k else []
    elif method == "most_popular":
        chosen = sorted(eligible, key=lambda t: (-posts[t], t))[:k]
    else:
        rep = upvotes_received(log, before=as_of)
        score = {t: sum(rep[p] for p in participants[t]) for t in eligible}
        chosen = sorted(eligible, key=lambda t: (-score[t], t))[:k]
    return ThreadSelection(chosen, method, shortfall=len(eligible) < n)


# --------------------------------------------------------------------------
# composition


@dataclass(frozen=True)
class EmailSpec:
    recipient: str
    group: TreatmentGroup
    threads: list[str]
    social_names: list[str]
    previews: list[str]
    week: int

    def __post_init__(self):
        if len(self.threads) > EMAIL_THREADS or len(set(self.threads)) != len(self.threads):
            raise ValueError(f"an email links at most {EMAIL_THREADS} distinct threads")
        if self.group.intro == "normal" and self.social_names:
            raise ValueError("normal-introduction emails carry no social names")

    @property
    def shortfall(self) -> bool:
        return len(self.threads) < EMAIL_THREADS

    def to_json(self) -> str:
        d = asdict(self)
        d["group_index"] = self.group.index
        d["shortfall"] = self.shortfall
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EmailSpec":
        d = json.loads(line)
        return cls(d["recipient"], TreatmentGroup(**d["group"]), d["threads"], d["social_names"],
                   d["previews"], d["week"])


def compose_email(recipient: str, group: TreatmentGroup, threads: Sequence[str], log: EventLog, week: int,
                  preview_chars: int = 200) -> EmailSpec:
    if len(threads) > EMAIL_THREADS:
        raise ValueError(f"at most {EMAIL_THREADS} threads per email")
    names: list[str] = []
    if group.intro == "social":
        wanted = set(threads)
        activity = Counter(e.learner for e in log.contributions() if e.thread in wanted and e.learner != recipient)
        names = [l for l, _ in sorted(activity.items(), key=lambda kv: (-kv[1], kv[0]))[:MAX_SOCIAL_NAMES]]
    previews: list[str] = []
    if group.body == "with_preview":
        first = _first_posts(log)
        previews = [((first[t].text or "") if t in first else "")[:preview_chars] for t in threads]
    return EmailSpec(recipient, group, list(threads), names, previews, week)


# --------------------------------------------------------------------------
# engagement log


@dataclass(frozen=True)
class EmailRecord:
    recipient: str
    week: int
    group_index: int
    sent_at: int
    opened: bool
    clicked_threads: tuple[str, ...] = ()

    def __post_init__(self):
        if self.clicked_threads and not self.opened:
            raise ValueError("a click implies an open")

    @property
    def group(self) -> TreatmentGroup:
        return TreatmentGroup.from_index(self.group_index)


def read_email_log(source: Source, emails: Mapping[tuple[str, int], EmailSpec] | None = None,
                   *, fmt: str | None = None) -> list[EmailRecord]:
    """Parse ``email_log.csv``; with ``emails`` clicks are checked against the sent threads."""
    label, rows, _ = _iter_rows(source, fmt)
    out, issues = [], []
    for lineno, row in rows:
        try:
            week = int(row["week"])
            gi = int(row["group_index"])
            TreatmentGroup.from_index(gi)
            opened = str(row["opened"]).strip().lower() in ("1", "true", "yes")
            clicked_raw = row.get("clicked_thread_ids") or ""
            clicked = tuple(c for c in (clicked_raw if isinstance(clicked_raw, list) else str(clicked_raw).split(";")) if c)
            rec = EmailRecord(str(row["recipient"]), week, gi, parse_timestamp(row["sent_at"]), opened, clicked)
        except (KeyError, TypeError, ValueError) as exc:
            issues.append(RowIssue(lineno, "<row>", str(exc)))
            continue
        if emails is not None:
            spec = emails.get((rec.recipient, rec.week))
            if spec is None:
                issues.append(RowIssue(lineno, "recipient", f"no email sent to {rec.recipient!r} in week {rec.week}"))
                continue
            extra = set(rec.clicked_threads) - set(spec.threads)
            if extra:
                issues.append(RowIssue(lineno, "clicked_thread_ids", f"clicked threads not in the email: {sorted(extra)}"))
                continue
        out.append(rec)
    if issues:
        raise LogValidationError(label, issues)
    return out


def write_email_log(records: Iterable[EmailRecord], dest: Union[str, os.PathLike, IO[str]]) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_email_log(records, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(EMAIL_LOG_COLUMNS)
    for r in records:
        w.writerow([r.recipient, r.week, r.group_index, r.sent_at, "true" if r.opened else "false",
                    ";".join(r.clicked_threads)])


def synthesize_email_log(emails: Iterable[EmailSpec], open_p: float, click_p: float, seed: int,
                         sent_at: Mapping[int, int] | None = None) -> list[EmailRecord]:
    """Simulated engagement: open with ``open_p``; overall click probability ``click_p``.

    Clicks happen only on opened emails (conditional rate click_p / open_p)
    and pick a non-empty subset of the linked threads.
    """
    if not 0 <= click_p <= open_p <= 1:
        raise ValueError("need 0 <= click_p <= open_p <= 1")
    cond = click_p / open_p if open_p > 0 else 0.0
    out = []
    for spec in emails:
        rng = np.random.default_rng(derive_seed(seed, "engagement", spec.recipient, spec.week))
        u_open, u_click = rng.random(2)
        opened = bool(u_open < open_p)
        clicked: tuple[str, ...] = ()
        if opened and spec.threads and u_click < cond:
            k = 1 + int(rng.binomial(len(spec.threads) - 1, 0.2))
            idx = sorted(rng.choice(len(spec.threads), size=k, replace=False).tolist())
            clicked = tuple(spec.threads[i] for i in idx)
        when = (sent_at or {}).get(spec.week, spec.week)
        out.append(EmailRecord(spec.recipient, spec.week, spec.group.index, when, opened, clicked))
    return out


# --------------------------------------------------------------------------
# analysis


@dataclass(frozen=True)
class EngagementRow:
    table: str  # overall, group, intro, body, selection
    level: str
    sent: int
    opened: int
    clicked: int

    @property
    def open_rate(self) -> float | None:
        return self.opened / self.sent if self.sent else None

    @property
    def click_through_rate(self) -> float | None:
        return self.clicked / self.sent if self.sent else None

    def to_dict(self) -> dict:
        return {"table": self.table, "level": self.level, "sent": self.sent, "opened": self.opened,
                "clicked": self.clicked, "open_rate": self.open_rate, "click_through_rate": self.click_through_rate}


@dataclass(frozen=True)
class Contrast:
    factor: str
    level: str
    baseline: str
    metric: str
    difference: float | None
    ci_low: float | None
    ci_high: float | None


@dataclass(frozen=True)
class EngagementReport:
    rows: list[EngagementRow]
    contrasts: list[Contrast]
    confidence: float = 0.95

    def table(self, name: str) -> dict[str, EngagementRow]:
        return {r.level: r for r in self.rows if r.table == name}


CONTRAST_BASELINES = {"intro": "normal", "body": "without_preview", "selection": "random"}
FACTOR_LEVELS = {"intro": INTROS, "body": BODIES, "selection": SELECTIONS}


def _rate_diff(a: EngagementRow, b: EngagementRow, metric: str, z: float) -> tuple[float | None, float | None, float | None]:
    if not a.sent or not b.sent:
        return None, None, None
    x1 = a.opened if metric == "open_rate" else a.clicked
    x2 = b.opened if metric == "open_rate" else b.clicked
    p1, p2 = x1 / a.sent, x2 / b.sent
    se = math.sqrt(p1 * (1 - p1) / a.sent + p2 * (1 - p2) / b.sent)
    d = p1 - p2
    return d, d - z * se, d + z * se


def analyze_engagement(records: Iterable[EmailRecord], confidence: float = 0.95) -> EngagementReport:
    """Open and click-through rates for all 16 arms, each factor's margins, and overall.

    Rates of cells with nothing sent are ``None`` (undefined), not 0. Each
    non-baseline factor level gets a rate difference against the baseline
    level with a normal-approximation interval.
    """
    cells: dict[int, list[int]] = {i: [0, 0, 0] for i in range(N_GROUPS)}
    for r in records:
        c = cells[r.group_index]
        c[0] += 1
        c[1] += int(r.opened)
        c[2] += int(bool(r.clicked_threads))
    rows = [EngagementRow("overall", "all", *[sum(c[i] for c in cells.values()) for i in range(3)])]
    for i in range(N_GROUPS):
        rows.append(EngagementRow("group", str(i), *cells[i]))
    margins: dict[str, dict[str, EngagementRow]] = {}
    for factor, levels in FACTOR_LEVELS.items():
        margins[factor] = {}
        for level in levels:
            tot = [0, 0, 0]
            for i, c in cells.items():
                if TreatmentGroup.from_index(i).factor(factor) == level:
                    tot = [t + x for t, x in zip(tot, c)]
            row = EngagementRow(factor, level, *tot)
            margins[factor][level] = row
            rows.append(row)
    z = float(norm.ppf(0.5 + confidence / 2))
    contrasts = []
    for factor, base in CONTRAST_BASELINES.items():
        for level in FACTOR_LEVELS[factor]:
            if level == base:
                continue
            for metric in ("open_rate", "click_through_rate"):
                d, lo, hi = _rate_diff(margins[factor][level], margins[factor][base], metric, z)
                contrasts.append(Contrast(factor, level, base, metric, d, lo, hi))
    return EngagementReport(rows, contrasts, confidence)
