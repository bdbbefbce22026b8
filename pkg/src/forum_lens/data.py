"""Canonical forum-log schema: parsing, validation, serialization, record linkage.

Input files are CSV (RFC-4180) or JSONL, chosen by file extension. Every
problem found while parsing is collected as a :class:`RowIssue` with its line
number; in strict mode (the default) any issue aborts with
:class:`LogValidationError`, otherwise offending rows are dropped and listed
on ``EventLog.rejected``.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import IO, Any, Iterable, Iterator, Mapping, Union

Source = Union[str, os.PathLike, IO[bytes], IO[str]]

EVENT_COLUMNS = (
    "event_id",
    "learner_id",
    "thread_id",
    "subforum",
    "timestamp",
    "kind",
    "vote_delta",
    "text",
    "target_id",
)
LEARNER_COLUMNS = ("learner_id", "education", "country", "age", "submitted_final", "passed")

_COUNTRY_RE = re.compile(r"^[A-Z]{2,3}$")
_TRUE = {"true", "1", "yes", "y", "t"}
_FALSE = {"false", "0", "no", "n", "f"}


class Kind(str, Enum):
    POST = "post"
    COMMENT = "comment"
    VIEW = "view"
    VOTE = "vote"


CONTRIBUTION_KINDS = frozenset({Kind.POST, Kind.COMMENT})


@dataclass(frozen=True)
class RowIssue:
    line: int
    field: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}, field {self.field!r}: {self.message}"


class LogValidationError(ValueError):
    """Raised when an input file violates the schema; carries every issue found."""

    def __init__(self, source: str, issues: list[RowIssue]):
        self.source = source
        self.issues = list(issues)
        head = "; ".join(str(i) for i in self.issues[:5])
        more = f" (+{len(self.issues) - 5} more)" if len(self.issues) > 5 else ""
        super().__init__(f"{source}: {head}{more}")


@dataclass(frozen=True)
class CourseMeta:
    """Course interval is half-open: ``start <= t < end`` (UTC seconds)."""

    start: int
    end: int
    enrolled: int | None = None

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("course end must be after course start")
        if self.enrolled is not None and self.enrolled < 0:
            raise ValueError("enrolled count must be nonnegative")

    @property
    def duration(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class ForumEvent:
    event_id: str
    learner: str
    thread: str
    subforum: str
    timestamp: int
    kind: Kind
    vote_delta: int | None = None
    text: str | None = None
    # post/comment a vote was cast on; not part of the minimal schema
    target: str | None = None

    @property
    def is_contribution(self) -> bool:
        return self.kind in CONTRIBUTION_KINDS


@dataclass(frozen=True)
class LearnerRecord:
    learner: str
    education: int | None = None
    country: str | None = None
    age: int | None = None
    submitted_final: bool | None = None
    passed: bool | None = None
    survey_responses: Mapping[str, str | None] = field(default_factory=dict)

    @property
    def is_respondent(self) -> bool:
        return any(v not in (None, "") for v in self.survey_responses.values())


@dataclass(frozen=True)
class EventLog:
    events: tuple[ForumEvent, ...]
    learners: Mapping[str, LearnerRecord]
    course: CourseMeta
    enrolled_count: int
    rejected: tuple[RowIssue, ...] = ()
    survey_unmatched: tuple[str, ...] = ()

    @property
    def course_interval(self) -> tuple[int, int]:
        return self.course.start, self.course.end

    def contributions(self) -> Iterator[ForumEvent]:
        return (e for e in self.events if e.is_contribution)

    def active_learners(self) -> set[str]:
        return {e.learner for e in self.events}

    def event_index(self) -> dict[str, ForumEvent]:
        return {e.event_id: e for e in self.events}

    def subforums(self) -> list[str]:
        return sorted({e.subforum for e in self.events})


# --------------------------------------------------------------------------
# low-level readers


def _detect_format(source: Source, fmt: str | None) -> str:
    if fmt:
        return fmt.lower()
    name = source if isinstance(source, (str, os.PathLike)) else getattr(source, "name", "")
    suffix = Path(str(name)).suffix.lower()
    return "jsonl" if suffix in (".jsonl", ".ndjson", ".json") else "csv"


def _open_text(source: Source) -> tuple[IO[str], bool, str]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), True, str(source)
    label = str(getattr(source, "name", "<stream>"))
    if isinstance(source, io.TextIOBase):
        return source, False, label
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return io.StringIO(data, newline=""), False, label


def _iter_rows(source: Source, fmt: str | None) -> tuple[str, list[tuple[int, dict[str, Any]]], list[str]]:
    """Return (label, [(line, row)], header). Header is empty for JSONL."""
    kind = _detect_format(source, fmt)
    handle, close, label = _open_text(source)
    try:
        rows: list[tuple[int, dict[str, Any]]] = []
        if kind == "jsonl":
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise LogValidationError(label, [RowIssue(lineno, "<row>", f"invalid JSON: {exc.msg}")])
                if not isinstance(obj, dict):
                    raise LogValidationError(label, [RowIssue(lineno, "<row>", "expected a JSON object")])
                rows.append((lineno, obj))
            return label, rows, []
        reader = csv.DictReader(handle)
        header = list(reader.fieldnames or [])
        prev = 1
        for row in reader:
            rows.append((prev + 1, row))
            prev = reader.line_num
        return label, rows, header
    finally:
        if close:
            handle.close()


def _blank(value: Any) -> bool:
    return value is None or (isinstance(value, str) and value.strip() == "")


def parse_timestamp(value: Any) -> int:
    """Integer UTC seconds from an int or ISO-8601 string; sub-seconds dropped."""
    if isinstance(value, bool):
        raise ValueError(f"not a timestamp: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if value != value:
            raise ValueError("NaN timestamp")
        return int(value // 1)
    text = str(value).strip()
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() // 1)


def _parse_bool(value: Any) -> bool | None:
    if _blank(value):
        return None
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_int(value: Any) -> int | None:
    if _blank(value):
        return None
    if isinstance(value, bool):
        raise ValueError(f"not an integer: {value!r}")
    if isinstance(value, int):
        return value
    text = str(value).strip()
    if not re.fullmatch(r"[+-]?\d+", text):
        raise ValueError(f"not an integer: {value!r}")
    return int(text)


# --------------------------------------------------------------------------
# events


def _event_from_row(lineno: int, row: Mapping[str, Any], course: CourseMeta) -> tuple[ForumEvent | None, list[RowIssue]]:
    issues: list[RowIssue] = []

    def text_field(name: str) -> str:
        value = row.get(name)
        return "" if value is None else str(value)

    ids = {}
    for name in ("event_id", "learner_id", "thread_id", "subforum"):
        ids[name] = text_field(name).strip()
        if not ids[name]:
            issues.append(RowIssue(lineno, name, "must be non-empty"))

    kind = None
    raw_kind = text_field("kind").strip().lower()
    try:
        kind = Kind(raw_kind)
    except ValueError:
        issues.append(RowIssue(lineno, "kind", f"unknown kind {raw_kind!r}"))

    ts = None
    try:
        ts = parse_timestamp(row.get("timestamp"))
    except (TypeError, ValueError) as exc:
        issues.append(RowIssue(lineno, "timestamp", f"malformed timestamp: {exc}"))
    if ts is not None and not (course.start <= ts < course.end):
        issues.append(RowIssue(lineno, "timestamp", f"{ts} outside course interval [{course.start}, {course.end})"))

    delta = None
    try:
        delta = _parse_int(row.get("vote_delta"))
    except ValueError as exc:
        issues.append(RowIssue(lineno, "vote_delta", str(exc)))
    text = row.get("text")
    text = None if _blank(text) else str(text)
    target = text_field("target_id").strip() or None

    if kind is Kind.VOTE:
        if delta not in (-1, 1):
            issues.append(RowIssue(lineno, "vote_delta", "vote rows need vote_delta of -1 or +1"))
    elif delta is not None:
        issues.append(RowIssue(lineno, "vote_delta", f"only vote rows carry vote_delta (kind={raw_kind})"))
    if kind in (Kind.VIEW, Kind.VOTE) and text is not None:
        issues.append(RowIssue(lineno, "text", f"{raw_kind} rows carry no text"))
    if target is not None and kind is not Kind.VOTE:
        issues.append(RowIssue(lineno, "target_id", "only vote rows carry target_id"))

    if issues:
        return None, issues
    return (
        ForumEvent(
            event_id=ids["event_id"],
            learner=ids["learner_id"],
            thread=ids["thread_id"],
            subforum=ids["subforum"],
            timestamp=ts,
            kind=kind,
            vote_delta=delta,
            text=text,
            target=target,
        ),
        [],
    )


def _cross_check(events: list[tuple[int, ForumEvent]]) -> list[RowIssue]:
    issues: list[RowIssue] = []
    seen: dict[str, int] = {}
    thread_subforum: dict[str, str] = {}
    started = {e.thread for _, e in events if e.kind is Kind.POST}
    contributions = {e.event_id: e for _, e in events if e.is_contribution}
    for lineno, e in events:
        if e.event_id in seen:
            issues.append(RowIssue(lineno, "event_id", f"duplicate event_id {e.event_id!r} (first on line {seen[e.event_id]})"))
        else:
            seen[e.event_id] = lineno
        sf = thread_subforum.setdefault(e.thread, e.subforum)
        if sf != e.subforum:
            issues.append(RowIssue(lineno, "subforum", f"thread {e.thread!r} already belongs to sub-forum {sf!r}"))
        if e.thread not in started:
            issues.append(RowIssue(lineno, "thread_id", f"dangling thread reference {e.thread!r}: no post starts it"))
        if e.target is not None:
            tgt = contributions.get(e.target)
            if tgt is None or tgt.thread != e.thread:
                issues.append(RowIssue(lineno, "target_id", f"vote target {e.target!r} is not a post/comment in thread {e.thread!r}"))
    return issues


def sort_events(events: Iterable[ForumEvent]) -> tuple[ForumEvent, ...]:
    return tuple(sorted(events, key=lambda e: (e.timestamp, e.event_id)))


# --------------------------------------------------------------------------
# learners


def _learner_from_row(lineno: int, row: Mapping[str, Any]) -> tuple[LearnerRecord | None, list[RowIssue]]:
    issues: list[RowIssue] = []
    lid = "" if row.get("learner_id") is None else str(row["learner_id"]).strip()
    if not lid:
        issues.append(RowIssue(lineno, "learner_id", "must be non-empty"))
    extra = set(row) - set(LEARNER_COLUMNS)
    for name in sorted(extra):
        issues.append(RowIssue(lineno, name, "unexpected learner column"))
    values: dict[str, Any] = {}
    for name, parser in (("education", _parse_int), ("age", _parse_int),
                         ("submitted_final", _parse_bool), ("passed", _parse_bool)):
        try:
            values[name] = parser(row.get(name))
        except ValueError as exc:
            issues.append(RowIssue(lineno, name, str(exc)))
    country = row.get("country")
    country = None if _blank(country) else str(country).strip().upper()
    if country is not None and not _COUNTRY_RE.match(country):
        issues.append(RowIssue(lineno, "country", f"not an ISO country code: {country!r}"))
    if values.get("age") is not None and values["age"] < 0:
        issues.append(RowIssue(lineno, "age", "age must be nonnegative"))
    if values.get("passed") and values.get("submitted_final") is False:
        issues.append(RowIssue(lineno, "passed", "passed=true requires submitted_final=true"))
    if issues:
        return None, issues
    submitted = values["submitted_final"]
    if values["passed"] and submitted is None:
        submitted = True
    return (
        LearnerRecord(
            learner=lid,
            education=values["education"],
            country=country,
            age=values["age"],
            submitted_final=submitted,
            passed=values["passed"],
        ),
        [],
    )


def parse_event_log(
    event_file: Source,
    learner_file: Source | None = None,
    course_meta: CourseMeta | None = None,
    *,
    fmt: str | None = None,
    learner_fmt: str | None = None,
    strict: bool = True,
) -> EventLog:
    """Parse and validate an event file (plus optional learner file).

    With ``strict=False`` rows failing row-level checks are dropped and
    reported on ``EventLog.rejected``; cross-row problems (duplicate IDs,
    dangling threads) are re-checked on the survivors and always raise.
    """
    if course_meta is None:
        raise ValueError("course_meta is required (course interval)")
    label, rows, _ = _iter_rows(event_file, fmt)
    parsed: list[tuple[int, ForumEvent]] = []
    rejected: list[RowIssue] = []
    for lineno, row in rows:
        event, issues = _event_from_row(lineno, row, course_meta)
        if issues:
            rejected.extend(issues)
        else:
            parsed.append((lineno, event))
    if rejected and strict:
        raise LogValidationError(label, rejected)
    cross = _cross_check(parsed)
    if cross:
        raise LogValidationError(label, cross)

    learners: dict[str, LearnerRecord] = {}
    if learner_file is not None:
        llabel, lrows, _ = _iter_rows(learner_file, learner_fmt)
        lissues: list[RowIssue] = []
        first_line: dict[str, int] = {}
        for lineno, row in lrows:
            rec, issues = _learner_from_row(lineno, row)
            lissues.extend(issues)
            if rec is None:
                continue
            if rec.learner in first_line:
                lissues.append(RowIssue(lineno, "learner_id", f"duplicate learner {rec.learner!r}"))
                continue
            first_line[rec.learner] = lineno
            learners[rec.learner] = rec
        if lissues:
            raise LogValidationError(llabel, lissues)

    for _, e in parsed:
        if e.learner not in learners:
            learners[e.learner] = LearnerRecord(learner=e.learner)

    in_events = {e.learner for _, e in parsed}
    enrolled = course_meta.enrolled if course_meta.enrolled is not None else len(learners)
    if enrolled < len(in_events):
        raise LogValidationError(
            label,
            [RowIssue(0, "enrolled_count", f"enrolled count {enrolled} < {len(in_events)} learners appearing in events")],
        )
    return EventLog(
        events=sort_events(e for _, e in parsed),
        learners=MappingProxyType(dict(sorted(learners.items()))),
        course=course_meta,
        enrolled_count=enrolled,
        rejected=tuple(rejected),
    )


def link_records(log: EventLog, survey_file: Source, *, fmt: str | None = None) -> EventLog:
    """Attach survey answers to learner records.

    Rows for learners unknown to ``log`` are not dropped silently: their IDs
    are listed in ``survey_unmatched`` of the returned log.
    """
    label, rows, _ = _iter_rows(survey_file, fmt)
    by_learner: dict[str, tuple[int, dict[str, str | None]]] = {}
    dupes: list[RowIssue] = []
    for lineno, row in rows:
        lid = "" if row.get("learner_id") is None else str(row["learner_id"]).strip()
        if not lid:
            dupes.append(RowIssue(lineno, "learner_id", "must be non-empty"))
            continue
        answers = {k: (None if _blank(v) else str(v)) for k, v in row.items() if k != "learner_id"}
        if lid in by_learner:
            dupes.append(RowIssue(lineno, "learner_id", f"duplicate survey row for learner {lid!r} (first on line {by_learner[lid][0]})"))
            continue
        by_learner[lid] = (lineno, answers)
    if dupes:
        raise LogValidationError(label, dupes)

    learners = dict(log.learners)
    unmatched = []
    for lid, (_, answers) in by_learner.items():
        if lid not in learners:
            unmatched.append(lid)
            continue
        learners[lid] = replace(learners[lid], survey_responses=MappingProxyType(answers))
    return replace(
        log,
        learners=MappingProxyType(learners),
        survey_unmatched=tuple(sorted(set(log.survey_unmatched) | set(unmatched))),
    )


# --------------------------------------------------------------------------
# serialization


def _fmt_bool(value: bool | None) -> str:
    return "" if value is None else ("true" if value else "false")


def write_events(log: EventLog, dest: Union[str, os.PathLike, IO[str]]) -> None:
    """Write events as canonical CSV (integer timestamps, time-sorted)."""
    rows = (
        {
            "event_id": e.event_id,
            "learner_id": e.learner,
            "thread_id": e.thread,
            "subforum": e.subforum,
            "timestamp": e.timestamp,
            "kind": e.kind.value,
            "vote_delta": "" if e.vote_delta is None else e.vote_delta,
            "text": e.text or "",
            "target_id": e.target or "",
        }
        for e in log.events
    )
    _write_csv(dest, EVENT_COLUMNS, rows)


def write_learners(log: EventLog, dest: Union[str, os.PathLike, IO[str]]) -> None:
    rows = (
        {
            "learner_id": r.learner,
            "education": "" if r.education is None else r.education,
            "country": r.country or "",
            "age": "" if r.age is None else r.age,
            "submitted_final": _fmt_bool(r.submitted_final),
            "passed": _fmt_bool(r.passed),
        }
        for r in log.learners.values()
    )
    _write_csv(dest, LEARNER_COLUMNS, rows)


def _write_csv(dest, columns, rows) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            _write_csv(fh, columns, rows)
        return
    writer = csv.DictWriter(dest, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
