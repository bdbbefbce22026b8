import io
import json
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from forum_lens.data import (CourseMeta, Kind, LogValidationError, link_records, parse_event_log, parse_timestamp,
                             write_events, write_learners)

from _util import WEEK, events_csv, make_log


def post(eid, learner, thread, t, kind="post", **kw):
    return dict(event_id=eid, learner_id=learner, thread_id=thread, timestamp=t, kind=kind, text="hi", subforum="s", **kw)


def test_three_posts_sorted_by_time():
    log = make_log([post("a", "L1", "t1", 300), post("b", "L2", "t2", 100), post("c", "L3", "t3", 200)])
    assert [e.event_id for e in log.events] == ["b", "c", "a"]
    assert len(log.events) == 3


def test_ties_break_by_event_id():
    log = make_log([post("z", "L1", "t1", 100), post("m", "L2", "t1", 100, kind="comment"),
                    post("a", "L3", "t2", 100)])
    assert [e.event_id for e in log.events] == ["a", "m", "z"]


def test_empty_event_file_takes_enrolment_from_config():
    log = make_log([], enrolled=42)
    assert log.events == () and log.enrolled_count == 42


def test_vote_with_text_names_the_row():
    rows = [post("p", "L1", "t1", 10), dict(event_id="v", learner_id="L2", thread_id="t1", timestamp=20,
                                            kind="vote", vote_delta="1", text="nope")]
    with pytest.raises(LogValidationError) as err:
        make_log(rows)
    issue = err.value.issues[0]
    assert issue.line == 3 and issue.field == "text"


@pytest.mark.parametrize("row, field", [
    (dict(timestamp="yesterday"), "timestamp"),
    (dict(kind="like"), "kind"),
    (dict(timestamp=10 * WEEK), "timestamp"),
    (dict(learner_id=""), "learner_id"),
    (dict(kind="vote", text="", vote_delta="2"), "vote_delta"),
    (dict(vote_delta="1"), "vote_delta"),
])
def test_row_errors_name_the_field(row, field):
    with pytest.raises(LogValidationError) as err:
        make_log([{**post("p", "L1", "t1", 10), **row}])
    assert field in {i.field for i in err.value.issues}


def test_duplicate_event_id():
    with pytest.raises(LogValidationError, match="duplicate"):
        make_log([post("p", "L1", "t1", 10), post("p", "L2", "t1", 20, kind="comment")])


def test_dangling_thread_reference():
    with pytest.raises(LogValidationError, match="t9"):
        make_log([post("c", "L1", "t9", 10, kind="comment")])


def test_vote_target_must_be_in_thread():
    rows = [post("p", "L1", "t1", 10), post("q", "L2", "t2", 10),
            dict(event_id="v", learner_id="L3", thread_id="t1", timestamp=20, kind="vote", vote_delta="1",
                 target_id="q")]
    with pytest.raises(LogValidationError):
        make_log(rows)


def test_lenient_mode_reports_rejected_rows():
    log = make_log([post("p", "L1", "t1", 10), {**post("q", "L2", "t1", 20), "kind": "like"}], strict=False)
    assert len(log.events) == 1
    assert log.rejected[0].line == 3


def test_enrolment_below_active_learners_rejected():
    with pytest.raises(LogValidationError, match="enrolled"):
        make_log([post("p", "L1", "t1", 10), post("q", "L2", "t1", 20, kind="comment")], enrolled=1)


def test_iso_and_integer_timestamps():
    assert parse_timestamp("1970-01-01T00:01:40Z") == 100
    assert parse_timestamp("1970-01-01T00:01:40") == 100
    assert parse_timestamp("100") == 100
    assert parse_timestamp("1970-01-01T00:01:40.900+00:00") == 100


def test_jsonl_equivalent_to_csv(tmp_path):
    rows = [post("p", "L1", "t1", 10), post("q", "L2", "t1", 20, kind="comment")]
    path = tmp_path / "events.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    meta = CourseMeta(0, 5 * WEEK)
    assert parse_event_log(path, course_meta=meta) == make_log(rows)


LEARNERS = "learner_id,education,country,age,submitted_final,passed\n"


def test_learner_file_and_defaults():
    lf = io.StringIO(LEARNERS + "L1,3,GB,30,true,true\nL9,,,,,\n")
    log = make_log([post("p", "L1", "t1", 10), post("q", "L2", "t1", 20, kind="comment")], learners=lf)
    assert log.learners["L1"].country == "GB" and log.learners["L1"].passed
    assert log.learners["L2"].education is None  # absent from learner file
    assert log.enrolled_count == 3


def test_passed_requires_submission():
    with pytest.raises(LogValidationError, match="passed"):
        make_log([], learners=io.StringIO(LEARNERS + "L1,,,,false,true\n"))


def test_passed_infers_submission():
    log = make_log([], learners=io.StringIO(LEARNERS + "L1,,,,,true\n"))
    assert log.learners["L1"].submitted_final is True


def _five():
    return make_log([post(f"p{i}", f"L{i}", f"t{i}", 10 + i) for i in range(5)])


def test_survey_two_of_five():
    log = link_records(_five(), io.StringIO("learner_id,q1\nL0,yes\nL3,no\n"))
    assert sum(r.is_respondent for r in log.learners.values()) == 2
    assert log.survey_unmatched == ()


def test_survey_unknown_learner_counted():
    log = link_records(_five(), io.StringIO("learner_id,q1\nX,yes\n"))
    assert log.survey_unmatched == ("X",)


def test_survey_duplicate_rows():
    with pytest.raises(LogValidationError, match="L1"):
        link_records(_five(), io.StringIO("learner_id,q1\nL1,a\nL1,b\n"))


event_rows = st.lists(
    st.tuples(st.sampled_from("ABCDE"), st.sampled_from(["t1", "t2", "t3"]),
              st.sampled_from(["comment", "view", "vote"]), st.integers(0, 5 * WEEK - 1)),
    max_size=15)


@settings(max_examples=60, deadline=None)
@given(event_rows)
def test_parse_is_idempotent(raw):
    rows = [post(f"open{t}", "A", t, 0) for t in ("t1", "t2", "t3")]
    for i, (who, th, kind, ts) in enumerate(raw):
        row = dict(event_id=f"x{i}", learner_id=who, thread_id=th, timestamp=ts, kind=kind)
        if kind == "comment":
            row["text"] = "some, \"quoted\" text"
        if kind == "vote":
            row["vote_delta"] = "-1" if i % 2 else "1"
        rows.append(row)
    log = make_log(rows)
    buf, lbuf = io.StringIO(), io.StringIO()
    write_events(log, buf)
    write_learners(log, lbuf)
    buf.seek(0)
    lbuf.seek(0)
    again = parse_event_log(buf, lbuf, log.course)
    assert again == log
    assert all(a.timestamp <= b.timestamp for a, b in zip(log.events, log.events[1:]))
    assert {e.kind for e in log.events} <= set(Kind)


def test_events_are_immutable():
    log = _five()
    with pytest.raises(Exception):
        log.events[0].learner = "other"
    assert replace(log.events[0], learner="other").learner == "other"
