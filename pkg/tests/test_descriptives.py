from dataclasses import replace
from types import MappingProxyType

import pytest
from hypothesis import given, settings, strategies as st

from forum_lens.data import Kind, LearnerRecord
from forum_lens.descriptives import activity_series, participation_summary, survey_response_rate

from _util import DAY, WEEK, make_log


def test_ten_posts_in_week_one():
    rows = [dict(learner_id=f"L{i}", thread_id=f"t{i}", timestamp=i * DAY // 2, kind="post", text="x")
            for i in range(10)]
    s = activity_series(make_log(rows), {Kind.POST}, WEEK)
    assert s.counts == [10, 0, 0, 0, 0]
    assert s.bucket_start == [0, WEEK, 2 * WEEK, 3 * WEEK, 4 * WEEK]


def test_empty_log_all_zero():
    assert activity_series(make_log([]), {Kind.POST}, WEEK).counts == [0] * 5


def test_filter_excludes_views():
    rows = [dict(learner_id="A", thread_id="t", timestamp=10, kind="post", text="x"),
            dict(learner_id="B", thread_id="t", timestamp=20, kind="view"),
            dict(learner_id="C", thread_id="t", timestamp=30, kind="view")]
    assert activity_series(make_log(rows), {"post"}, WEEK).total == 1


def test_wide_bucket_is_single_bucket():
    assert len(activity_series(make_log([]), {"post"}, 100 * WEEK).counts) == 1


def test_bad_width():
    with pytest.raises(ValueError):
        activity_series(make_log([]), {"post"}, 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 5 * WEEK - 1), max_size=30), st.integers(1, 6 * WEEK))
def test_total_invariant_under_width(times, width):
    rows = [dict(learner_id="A", thread_id=f"t{i}", timestamp=t, kind="post", text="x") for i, t in enumerate(times)]
    log = make_log(rows)
    a = activity_series(log, {"post"}, width)
    assert a.total == len(times) == activity_series(log, {"post"}, DAY).total
    assert all(b - a_ == width for a_, b in zip(a.bucket_start, a.bucket_start[1:]))


def test_participation_partition():
    rows = [dict(learner_id="A", thread_id="t", timestamp=1, kind="post", text="x"),
            dict(learner_id="B", thread_id="t", timestamp=2, kind="comment", text="x"),
            dict(learner_id="C", thread_id="t", timestamp=3, kind="view")]
    p = participation_summary(make_log(rows, enrolled=10))
    assert (p.posters, p.viewers_only, p.inactive_enrolled) == (2, 1, 7)
    assert p.enrolled == 10


def test_everyone_posts_once():
    rows = [dict(learner_id=f"L{i}", thread_id=f"t{i}", timestamp=i, kind="post", text="x") for i in range(4)]
    p = participation_summary(make_log(rows, enrolled=4))
    assert p.viewers_only == 0 and p.posts_per_poster.mean == 1


def test_posts_per_poster_median_and_mean():
    counts = {"A": 1, "B": 1, "C": 2, "D": 3, "E": 8}
    rows = [dict(learner_id=l, thread_id=f"t{l}", timestamp=i + 1, kind="post" if i == 0 else "comment", text="x")
            for l, n in counts.items() for i in range(n)]
    d = participation_summary(make_log(rows)).posts_per_poster
    assert (d.min, d.median, d.mean, d.max) == (1, 2, 3, 8)


def _with_respondents(k, enrolled):
    log = make_log([], enrolled=enrolled)
    learners = {f"L{i}": LearnerRecord(f"L{i}", survey_responses={"q": "yes"}) for i in range(k)}
    return replace(log, learners=MappingProxyType(learners))


@pytest.mark.parametrize("k, enrolled, rate, flag", [(500, 10000, 0.05, True), (0, 10000, 0.0, True),
                                                     (2000, 10000, 0.2, False)])
def test_survey_rate(k, enrolled, rate, flag):
    r = survey_response_rate(_with_respondents(k, enrolled))
    assert r["rate"] == rate and r["low_response_flag"] is flag


def test_blank_survey_answers_do_not_count():
    log = make_log([], enrolled=5)
    log = replace(log, learners=MappingProxyType({"L": LearnerRecord("L", survey_responses={"q": None})}))
    assert survey_response_rate(log)["respondents"] == 0
