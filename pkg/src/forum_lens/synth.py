"""Deterministic synthetic course used as the bundled end-to-end fixture."""

from __future__ import annotations

import csv
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .seeding import derive_seed

DAY = 86400
WEEK = 7 * DAY
SUBFORUMS = ("introductions", "lectures", "assignments", "study-groups")
COURSE_START = int(datetime(2014, 1, 6, tzinfo=timezone.utc).timestamp())

_WORDS = ("idea", "question", "answer", "week", "lecture", "quiz", "network", "data", "help", "thanks",
          "example", "reading", "peer", "review", "deadline", "concept", "theory", "video", "notes", "group")
_PHASES = ("none", "I", "I", "I", "II", "II", "III", "IV", "V")
_INTENTS = ("argumentative", "responsive", "informative", "elicitive", "imperative")


def _sentence(rng: np.random.Generator, n: int) -> str:
    return " ".join(_WORDS[i] for i in rng.integers(len(_WORDS), size=n)).capitalize() + "."


def generate_course(seed: int = 20140106, n_learners: int = 150, weeks: int = 5, n_threads: int = 48) -> dict:
    """Return rows for events, learners, survey and codes.

    Poster activity is heavy-tailed so that a few vocal learners dominate,
    as in real forums; about a third of the enrolment only lurks.
    """
    rng = np.random.default_rng(derive_seed(seed, "synth"))
    learners = [f"L{i:03d}" for i in range(n_learners)]
    start, end = COURSE_START, COURSE_START + weeks * WEEK
    posters = learners[: int(n_learners * 0.55)]
    lurkers = learners[int(n_learners * 0.55): int(n_learners * 0.85)]
    activity = rng.pareto(1.5, size=len(posters)) + 1.0
    activity /= activity.sum()

    events, contributions = [], []
    eid = 0

    def add(row):
        nonlocal eid
        eid += 1
        row["event_id"] = f"E{eid:05d}"
        events.append(row)
        return row

    for t in range(n_threads):
        thread = f"T{t:03d}"
        sf = SUBFORUMS[0] if t < 6 else SUBFORUMS[1 + int(rng.integers(len(SUBFORUMS) - 1))]
        opened = start + int(rng.integers(0, end - start - 2 * DAY))
        starter = posters[int(rng.choice(len(posters), p=activity))]
        first = add(dict(learner_id=starter, thread_id=thread, subforum=sf, timestamp=opened, kind="post",
                         vote_delta="", text=_sentence(rng, 8), target_id=""))
        contributions.append(first)
        n_replies = int(rng.integers(1, 12))
        for _ in range(n_replies):
            who = posters[int(rng.choice(len(posters), p=activity))]
            when = min(end - 1, opened + int(rng.exponential(2 * DAY)))
            kind = "comment" if rng.random() < 0.6 else "post"
            contributions.append(add(dict(learner_id=who, thread_id=thread, subforum=sf, timestamp=when, kind=kind,
                                          vote_delta="", text=_sentence(rng, 6), target_id="")))
    audience = posters + lurkers
    for _ in range(len(contributions) * 2):
        target = contributions[int(rng.integers(len(contributions)))]
        who = audience[int(rng.integers(len(audience)))]
        when = min(end - 1, target["timestamp"] + int(rng.integers(0, 3 * DAY)))
        if rng.random() < 0.3:
            add(dict(learner_id=who, thread_id=target["thread_id"], subforum=target["subforum"], timestamp=when,
                     kind="vote", vote_delta=1 if rng.random() < 0.9 else -1, text="",
                     target_id=target["event_id"]))
        else:
            add(dict(learner_id=who, thread_id=target["thread_id"], subforum=target["subforum"], timestamp=when,
                     kind="view", vote_delta="", text="", target_id=""))

    learner_rows, survey_rows = [], []
    countries = ("GB", "US", "IN", "BR", "DE", "NG", "CN", "ES")
    for lid in learners:
        known = rng.random() < 0.7
        submitted = bool(rng.random() < (0.6 if lid in posters else 0.2))
        passed = submitted and bool(rng.random() < 0.7)
        learner_rows.append(dict(
            learner_id=lid,
            education=int(rng.integers(1, 6)) if known else "",
            country=countries[int(rng.integers(len(countries)))] if known else "",
            age=int(rng.integers(18, 70)) if known else "",
            submitted_final="true" if submitted else "false",
            passed="true" if passed else "false",
        ))
        if rng.random() < 0.12:
            survey_rows.append(dict(learner_id=lid, motivation=str(int(rng.integers(1, 6))),
                                    satisfaction=str(int(rng.integers(1, 6)))))
    survey_rows.append(dict(learner_id="X999", motivation="3", satisfaction="4"))  # not enrolled

    code_rows = []
    coded = [c for c in contributions if rng.random() < 0.5]
    for c in coded:
        phase = _PHASES[int(rng.integers(len(_PHASES)))]
        intent = _INTENTS[int(rng.integers(len(_INTENTS)))]
        topic = ("content", "logistics", "social")[int(rng.integers(3))]
        code_rows.append(dict(post_id=c["event_id"], coder="c1", phase=phase, intent=intent, topic=topic))
        if rng.random() < 0.8:
            p2 = phase if rng.random() < 0.75 else _PHASES[int(rng.integers(len(_PHASES)))]
            i2 = intent if rng.random() < 0.7 else _INTENTS[int(rng.integers(len(_INTENTS)))]
            code_rows.append(dict(post_id=c["event_id"], coder="c2", phase=p2, intent=i2, topic=topic))

    events.sort(key=lambda r: (r["timestamp"], r["event_id"]))
    return {
        "events": events,
        "learners": learner_rows,
        "survey": survey_rows,
        "codes": code_rows,
        "course": {"start": start, "end": end, "enrolled": n_learners + 10},
    }


FIXTURE_CONFIG = """\
[course]
start = {start}
end = {end}
enrolled = {enrolled}
introductory_subforums = introductions

[inputs]
events = events.csv
learners = learners.csv
survey = survey.csv
codes = codes.csv
email_log = email_log.csv

[run]
seed = 20140106
output = out
window = 604800

[network]
dense_edge_warning = 5000

[backbone]
alpha = 0.05
method = analytic
replicates = 199
bonferroni = false

[robustness]
strategy = degree_recomputed
epsilon = 0.05
replicates = 50

[diffusion]
beta = 0.2
steps = 20
replicates = 50
weighted = false
temporal = false

[dialogue]
coder_a = c1
coder_b = c2
group_by = subforum
majority = true

[typology]
kmax = 6
iters = 5000
restarts = 2
code_columns = auto

[experiment]
weeks = 5
threads = 5
open_probability = 0.35
click_probability = 0.04
"""


def bundled_fixture_dir() -> Path:
    """Directory of the fixture course shipped inside the package."""
    return Path(str(resources.files("forum_lens") / "fixtures"))


def _write(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_fixture(out_dir: str | Path, seed: int = 20140106) -> Path:
    """Write the synthetic course (inputs + ``course.ini``) and a simulated email log."""
    from .data import EVENT_COLUMNS, LEARNER_COLUMNS
    from .config import load_config
    from .pipeline import build_campaign, load_inputs
    from .experiment import synthesize_email_log, write_email_log

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    course = generate_course(seed)
    _write(out / "events.csv", course["events"], EVENT_COLUMNS)
    _write(out / "learners.csv", course["learners"], LEARNER_COLUMNS)
    _write(out / "survey.csv", course["survey"], ("learner_id", "motivation", "satisfaction"))
    _write(out / "codes.csv", course["codes"], ("post_id", "coder", "phase", "intent", "topic"))
    (out / "course.ini").write_text(FIXTURE_CONFIG.format(**course["course"]))

    cfg = load_config(out / "course.ini")
    log = load_inputs(cfg)
    emails = build_campaign(cfg, log)
    sent_at = {w: cfg.course.start + w * WEEK for w in range(1, cfg.getint("experiment", "weeks") + 1)}
    records = synthesize_email_log(emails, cfg.getfloat("experiment", "open_probability"),
                                   cfg.getfloat("experiment", "click_probability"),
                                   derive_seed(seed, "fixture-engagement"), sent_at)
    write_email_log(records, out / "email_log.csv")
    return out
