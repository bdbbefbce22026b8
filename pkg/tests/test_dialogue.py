import io
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forum_lens.data import LogValidationError
from forum_lens.dialogue import (UNRESOLVED, CodedCorpus, CodedResponse, Intent, KnowledgePhase, PhaseSchema,
                                 agreement, code_distribution, cohen_kappa, load_codes, resolve_labels)

from _util import WEEK, make_log


def kappa_from_table(table):
    """Cohen's kappa computed from a confusion matrix (independent formulation)."""
    m = np.asarray(table, dtype=float)
    n = m.sum()
    p_o = np.trace(m) / n
    p_e = float(m.sum(axis=1) @ m.sum(axis=0)) / n**2
    return (p_o - p_e) / (1 - p_e)


def labels_from_table(table):
    a, b = [], []
    for i, row in enumerate(table):
        for j, c in enumerate(row):
            a += [i] * c
            b += [j] * c
    return a, b


def test_hand_table_kappa_half():
    ag = cohen_kappa(*labels_from_table([[3, 1], [1, 3]]))
    assert ag.observed == 0.75 and ag.expected == 0.5
    assert ag.kappa == pytest.approx(0.5, abs=1e-12)


def test_identical_labels():
    labels = ["x", "y"] * 5
    assert cohen_kappa(labels, labels).kappa == 1.0


def test_degenerate_constant_coders():
    ag = cohen_kappa(["x"] * 4, ["x"] * 4)
    assert ag.kappa == 1.0 and ag.degenerate


def test_chance_agreement_near_zero():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 3, 20000).tolist()
    b = rng.integers(0, 3, 20000).tolist()
    assert abs(cohen_kappa(a, b).kappa) < 0.02


@settings(max_examples=150, deadline=None)
@given(st.lists(st.lists(st.integers(0, 6), min_size=3, max_size=3), min_size=3, max_size=3))
def test_kappa_matches_table_formula(table):
    a, b = labels_from_table(table)
    if not a:
        return
    ag = cohen_kappa(a, b)
    assert -1 - 1e-12 <= ag.kappa <= 1 + 1e-12
    assert cohen_kappa(b, a).kappa == pytest.approx(ag.kappa)
    if not ag.degenerate:
        assert ag.kappa == pytest.approx(kappa_from_table(table), abs=1e-12)
        off_diagonal = sum(table[i][j] for i in range(3) for j in range(3) if i != j)
        assert (ag.kappa == pytest.approx(1.0)) == (off_diagonal == 0)


def test_phase_order_and_none():
    assert KnowledgePhase.I < KnowledgePhase.III < KnowledgePhase.V
    with pytest.raises(TypeError):
        KnowledgePhase.NONE < KnowledgePhase.I
    assert KnowledgePhase.parse("iv") is KnowledgePhase.IV


def test_phase_schema_from_config():
    schema = PhaseSchema.from_config({"II": "discovery of dissonance"})
    assert schema.label(KnowledgePhase.II) == "II (discovery of dissonance)"
    assert schema.label(KnowledgePhase.I) == "I (sharing/comparing of information)"
    assert schema.label(KnowledgePhase.IV) == "IV"


def test_intent_error_lists_valid_tokens():
    with pytest.raises(ValueError) as err:
        Intent.parse("persuasive")
    for token in ("argumentative", "responsive", "informative", "elicitive", "imperative"):
        assert token in str(err.value)


def forum():
    rows = [dict(event_id="p1", learner_id="A", thread_id="t1", subforum="s1", timestamp=10, kind="post", text="q"),
            dict(event_id="p2", learner_id="B", thread_id="t1", subforum="s1", timestamp=20, kind="comment", text="a"),
            dict(event_id="p3", learner_id="C", thread_id="t2", subforum="s2", timestamp=WEEK + 5, kind="post",
                 text="q"),
            dict(event_id="v1", learner_id="D", thread_id="t2", subforum="s2", timestamp=WEEK + 9, kind="view")]
    return make_log(rows)


CODES = "post_id,coder,phase,intent,topic\n"


def test_two_coders_three_posts():
    text = CODES + "".join(f"p{i},{c},I,informative,x\n" for i in (1, 2, 3) for c in ("c1", "c2"))
    corpus = load_codes(io.StringIO(text), forum())
    assert len(corpus) == 6 and corpus.coders == ["c1", "c2"]


@pytest.mark.parametrize("line, field", [
    ("p1,c1,I,persuasive,x", "intent"),
    ("p1,c1,VI,informative,x", "phase"),
    ("v1,c1,I,informative,x", "post_id"),
    ("zz,c1,I,informative,x", "post_id"),
])
def test_load_codes_errors(line, field):
    with pytest.raises(LogValidationError) as err:
        load_codes(io.StringIO(CODES + line + "\n"), forum())
    assert err.value.issues[0].field == field


def test_duplicate_post_coder():
    with pytest.raises(LogValidationError, match="duplicate"):
        load_codes(io.StringIO(CODES + "p1,c1,I,informative,x\np1,c1,II,elicitive,x\n"), forum())


def test_agreement_requires_overlap():
    corpus = CodedCorpus((CodedResponse("p1", "a", KnowledgePhase.I, Intent.ELICITIVE),
                          CodedResponse("p2", "b", KnowledgePhase.I, Intent.ELICITIVE)))
    with pytest.raises(ValueError, match="share no"):
        agreement(corpus, "a", "b")


def test_conflicts_need_explicit_resolution():
    corpus = CodedCorpus((CodedResponse("p1", "a", KnowledgePhase.I, Intent.ELICITIVE),
                          CodedResponse("p1", "b", KnowledgePhase.I, Intent.RESPONSIVE),
                          CodedResponse("p1", "c", KnowledgePhase.I, Intent.RESPONSIVE),
                          CodedResponse("p2", "a", KnowledgePhase.I, Intent.ELICITIVE),
                          CodedResponse("p2", "b", KnowledgePhase.I, Intent.RESPONSIVE)))
    with pytest.raises(ValueError):
        resolve_labels(corpus, "intent")
    maj = resolve_labels(corpus, "intent", majority=True)
    assert maj == {"p1": Intent.RESPONSIVE, "p2": UNRESOLVED}
    assert resolve_labels(corpus, "intent", coder="a") == {"p1": Intent.ELICITIVE, "p2": Intent.ELICITIVE}


def test_distribution_four_elicitive_six_responsive():
    rows = [dict(event_id=f"p{i}", learner_id=f"L{i}", thread_id="t", subforum="S", timestamp=i + 1,
                 kind="post" if i == 0 else "comment", text="x") for i in range(10)]
    log = make_log(rows)
    corpus = CodedCorpus(tuple(CodedResponse(f"p{i}", "c", KnowledgePhase.II,
                                             Intent.ELICITIVE if i < 4 else Intent.RESPONSIVE) for i in range(10)))
    dist = {(r.dimension, r.value): r.fraction for r in code_distribution(corpus, log)}
    assert dist[("intent", "elicitive")] == 0.4 and dist[("intent", "responsive")] == 0.6
    assert dist[("phase", "II")] == 1.0


def test_all_informative_and_empty():
    log = forum()
    corpus = CodedCorpus(tuple(CodedResponse(p, "c", KnowledgePhase.I, Intent.INFORMATIVE) for p in ("p1", "p2", "p3")))
    for group_by in ("subforum", "window", "learner"):
        rows = [r for r in code_distribution(corpus, log, group_by) if r.dimension == "intent"]
        assert {r.fraction for r in rows} == {1.0}
    assert {r.group for r in code_distribution(corpus, log, "window")} == {"w00", "w01"}
    assert code_distribution(CodedCorpus(()), log) == []


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["p1", "p2", "p3"]), st.sampled_from(["c1", "c2", "c3"]),
                          st.sampled_from(list(KnowledgePhase)), st.sampled_from(list(Intent))),
                unique_by=lambda x: (x[0], x[1])),
       st.sampled_from(["subforum", "window", "learner"]))
def test_fractions_sum_to_one(codes, group_by):
    corpus = CodedCorpus(tuple(CodedResponse(*c) for c in codes))
    rows = code_distribution(corpus, forum(), group_by, majority=len(corpus.coders) > 1)
    totals = defaultdict(float)
    for r in rows:
        totals[(r.group, r.dimension)] += r.fraction
    assert all(abs(t - 1.0) <= 1e-12 for t in totals.values())
