"""Activity time series, participation partition and survey response rate."""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import dataclass

from .data import CONTRIBUTION_KINDS, EventLog, Kind

# "less than one in ten course participants" answer a typical course survey
LOW_RESPONSE_THRESHOLD = 0.10


@dataclass(frozen=True)
class TimeSeries:
    bucket_start: list[int]
    counts: list[int]
    bucket_width: int

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class Distribution:
    min: float
    median: float
    mean: float
    max: float


@dataclass(frozen=True)
class ParticipationSummary:
    posters: int
    viewers_only: int
    inactive_enrolled: int
    posts_per_poster: Distribution | None

    @property
    def enrolled(self) -> int:
        return self.posters + self.viewers_only + self.inactive_enrolled


def _kinds(kind_filter) -> set[Kind]:
    return {Kind(k) for k in kind_filter}


def activity_series(log: EventLog, kind_filter=(Kind.POST,), bucket_width: int = 7 * 86400) -> TimeSeries:
    """Count matching events per bucket; buckets start at the course start."""
    if bucket_width <= 0:
        raise ValueError("bucket_width must be positive")
    start, end = log.course_interval
    n = max(1, math.ceil((end - start) / bucket_width))
    counts = [0] * n
    kinds = _kinds(kind_filter)
    for e in log.events:
        if e.kind in kinds:
            counts[min((e.timestamp - start) // bucket_width, n - 1)] += 1
    return TimeSeries([start + i * bucket_width for i in range(n)], counts, bucket_width)


def participation_summary(log: EventLog) -> ParticipationSummary:
    posts = Counter(e.learner for e in log.events if e.kind in CONTRIBUTION_KINDS)
    others = {e.learner for e in log.events} - set(posts)
    dist = None
    if posts:
        values = sorted(posts.values())
        dist = Distribution(
            min=values[0],
            median=statistics.median(values),
            mean=statistics.fmean(values),
            max=values[-1],
        )
    inactive = log.enrolled_count - len(posts) - len(others)
    if inactive < 0:
        raise ValueError("enrolled_count smaller than the number of active learners")
    return ParticipationSummary(len(posts), len(others), inactive, dist)


def survey_response_rate(log: EventLog) -> dict:
    if log.enrolled_count <= 0:
        raise ValueError("enrolled_count must be positive")
    respondents = sum(1 for r in log.learners.values() if r.is_respondent)
    rate = respondents / log.enrolled_count
    return {
        "respondents": respondents,
        "enrolled": log.enrolled_count,
        "rate": rate,
        "low_response_flag": rate < LOW_RESPONSE_THRESHOLD,
        "threshold": LOW_RESPONSE_THRESHOLD,
    }
