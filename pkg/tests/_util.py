"""Small builders shared by the test modules."""

import csv
import io
from itertools import combinations

from forum_lens.data import EVENT_COLUMNS, CourseMeta, parse_event_log

DAY = 86400
WEEK = 7 * DAY


def events_csv(rows) -> io.StringIO:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=EVENT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for i, r in enumerate(rows):
        row = {"event_id": f"e{i:04d}", "subforum": "s", "vote_delta": "", "text": "", "target_id": ""}
        row.update(r)
        w.writerow(row)
    buf.seek(0)
    return buf


def make_log(rows, start=0, end=5 * WEEK, enrolled=None, learners=None, strict=True):
    return parse_event_log(events_csv(rows), learners, CourseMeta(start, end, enrolled), strict=strict)


def thread_rows(threads, t=100, subforum="s", step=1):
    """One contribution per (thread, member): the first member opens the thread."""
    rows = []
    for th, members in threads.items():
        for k, m in enumerate(members):
            rows.append(dict(learner_id=m, thread_id=th, subforum=subforum, timestamp=t,
                             kind="post" if k == 0 else "comment", text="x"))
            t += step
    return rows


def clique_oracle(threads):
    """Co-posting weights by explicit per-thread clique accumulation."""
    nodes, weights = set(), {}
    for members in threads.values():
        ms = sorted(set(members))
        nodes.update(ms)
        for a, b in combinations(ms, 2):
            weights[(a, b)] = weights.get((a, b), 0) + 1
    return nodes, weights
