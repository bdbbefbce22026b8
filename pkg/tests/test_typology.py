import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forum_lens.seeding import derive_seed
from forum_lens.dialogue import CodedCorpus, CodedResponse, Intent, KnowledgePhase
from forum_lens.typology import (UNKNOWN, Factorization, FeatureConfig, assign_types, bnmf, bnmf_objective,
                                 build_feature_matrix, profile_types)

from _util import make_log


def rank_one(seed=0, n=20, m=10):
    rng = np.random.default_rng(seed)
    return np.outer(rng.uniform(1, 6, n), rng.uniform(1, 6, m))


def two_blocks(seed=0):
    rng = np.random.default_rng(seed)
    A = np.zeros((22, 14))
    A[:10, :6] = np.outer(rng.uniform(1, 6, 10), rng.uniform(1, 6, 6))
    A[10:, 6:] = np.outer(rng.uniform(1, 6, 12), rng.uniform(1, 6, 8))
    return A


def non_increasing(trace, tol=1e-9):
    return all(b - a <= tol for a, b in zip(trace, trace[1:]))


def test_rank_one_collapses():
    A = rank_one()
    f = bnmf(A, 5, seed=1)
    assert len(f.active) == 1
    assert np.linalg.norm(A - f.reconstruction()) / np.linalg.norm(A) < 1e-3
    assert non_increasing(f.objective_trace)


def test_two_blocks_recovered():
    A = two_blocks()
    f = bnmf(A, 6, seed=3)
    assert len(f.active) == 2
    types = assign_types(f).types
    assert len(set(types[:10])) == 1 and len(set(types[10:])) == 1 and types[0] != types[10]
    assert non_increasing(f.objective_trace)


def test_random_matrix_trace_monotone():
    A = np.random.default_rng(7).uniform(0, 3, (20, 8))
    f = bnmf(A, 8, max_iters=500, tol=0.0, seed=2)
    assert len(f.objective_trace) == 501
    assert non_increasing(f.objective_trace)
    assert (f.W >= 0).all() and (f.H >= 0).all()


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(0, 10**6))
def test_trace_monotone_property(n, m, seed):
    A = np.random.default_rng(seed).exponential(1.0, (n, m))
    f = bnmf(A, min(n, m), max_iters=300, seed=seed)
    assert non_increasing(f.objective_trace)


def test_pruned_components_carry_no_energy():
    A = rank_one(3)
    f = bnmf(A, 5, seed=0)
    recon = f.reconstruction()
    Wa = f.W[:, list(f.active)]
    Ha = f.H[list(f.active), :]
    assert np.linalg.norm(recon - Wa @ Ha) ** 2 / np.linalg.norm(recon) ** 2 < 1e-6


def test_relevance_is_optimal_for_final_factors():
    A = two_blocks(1)
    f = bnmf(A, 4, max_iters=300, seed=0)
    N, M = A.shape
    beta = f.relevance
    J = bnmf_objective(A, f.W, f.H, beta, 1e-3, 1e-3)
    assert J == pytest.approx(f.objective_trace[-1])
    for k in range(4):
        for factor in (0.99, 1.01):
            nudged = beta.copy()
            nudged[k] *= factor
            assert bnmf_objective(A, f.W, f.H, nudged, 1e-3, 1e-3) >= J


def test_same_seed_bit_identical():
    A = two_blocks(2)
    f1, f2 = bnmf(A, 4, max_iters=200, seed=5, restarts=2), bnmf(A, 4, max_iters=200, seed=5, restarts=2)
    assert np.array_equal(f1.W, f2.W) and np.array_equal(f1.H, f2.H) and f1.objective_trace == f2.objective_trace


def test_restarts_keep_lowest_objective():
    A = two_blocks(2)
    best = bnmf(A, 4, max_iters=200, seed=5, restarts=3)
    first = bnmf(A, 4, max_iters=200, seed=5, restarts=1)
    assert best.objective_trace[-1] <= first.objective_trace[-1]
    assert best.seed in {derive_seed(5, "bnmf", r) for r in range(3)}


def test_errors():
    with pytest.raises(ValueError):
        bnmf(-np.ones((3, 3)), 2)
    with pytest.raises(ValueError):
        bnmf(np.ones((3, 4)), 4)


def fact(W):
    W = np.asarray(W, dtype=float)
    return Factorization(W, np.ones((W.shape[1], 2)), np.ones(W.shape[1]), tuple(range(W.shape[1])), [0.0], 0, 1,
                         True, rows=tuple(f"L{i}" for i in range(W.shape[0])))


def test_assign_examples():
    t = assign_types(fact([[0.9, 0.1]]))
    assert t.type_of("L0") == 0 and t.strength_of("L0") == pytest.approx(0.9)
    assert assign_types(fact([[0.5, 0.5]])).type_of("L0") == 0
    single = assign_types(fact([[2.0], [3.0]]))
    assert single.as_dict() == {"L0": 0, "L1": 0} and single.strength_of("L1") == 1.0
    with pytest.raises(ValueError):
        assign_types(Factorization(np.ones((1, 1)), np.ones((1, 1)), np.ones(1), (), [0.0], 0, 1, True))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(0.01, 10), min_size=3, max_size=3), min_size=1, max_size=6),
       st.floats(0.1, 10))
def test_assignment_invariant_under_row_rescaling(rows, c):
    W = np.array(rows)
    t1, t2 = assign_types(fact(W)), assign_types(fact(W * c))
    assert np.array_equal(t1.types, t2.types)
    assert np.allclose(t1.strengths.sum(axis=1), 1.0, atol=1e-9)


def test_column_scaling_preserves_product():
    A = two_blocks(4)
    f = bnmf(A, 3, max_iters=100, seed=0)
    c = np.array([2.0, 0.5, 3.0])
    assert np.allclose((f.W * c) @ (f.H / c[:, None]), f.reconstruction())


# -- features and profiles ----------------------------------------------------

def activity():
    def ev(eid, who, th, t, kind, **kw):
        row = dict(event_id=eid, learner_id=who, thread_id=th, timestamp=t, kind=kind)
        row.update(kw)
        if kind in ("post", "comment"):
            row.setdefault("text", "x")
        return row
    rows = [ev("p1", "A", "t1", 1, "post"), ev("p2", "A", "t2", 2, "post"), ev("p3", "A", "t3", 3, "post")]
    rows += [ev(f"v{i}", "A", "t1", 10 + i, "view") for i in range(5)]
    rows += [ev("c1", "B", "t1", 20, "comment"), ev("c2", "B", "t1", 21, "comment"),
             ev("x1", "V", "t1", 30, "vote", vote_delta="1")]
    learners = io.StringIO("learner_id,education,country,age,submitted_final,passed\n"
                           "A,2,GB,30,true,true\nB,,,,,\nV,4,US,60,false,false\n")
    return make_log(rows, learners=learners)


def test_feature_counts():
    fm = build_feature_matrix(activity())
    assert list(fm.row("A")) == [3, 0, 3, 5, 0]
    assert list(fm.row("B")) == [0, 2, 1, 0, 0]
    assert fm.columns == ("posts", "comments", "threads", "views", "votes")


def test_vote_only_learner_excluded_without_votes():
    fm = build_feature_matrix(activity(), config=FeatureConfig(behaviours=("posts", "comments", "views")))
    assert "V" not in fm.rows and fm.excluded == ("V",)


def test_code_columns():
    corpus = CodedCorpus((CodedResponse("c1", "k", KnowledgePhase.I, Intent.ELICITIVE),
                          CodedResponse("c2", "k", KnowledgePhase.II, Intent.ELICITIVE)))
    fm = build_feature_matrix(activity(), corpus)
    assert fm.row("B")[fm.columns.index("intent:elicitive")] == 2
    assert fm.row("A")[fm.columns.index("intent:elicitive")] == 0
    with pytest.raises(ValueError):
        build_feature_matrix(activity(), None, FeatureConfig(code_dimensions=("intent",)))


def test_scaled_has_unit_column_means():
    fm = build_feature_matrix(activity()).scaled()
    means = fm.values.mean(axis=0)
    assert np.allclose(means[means > 0], 1.0) and (fm.values >= 0).all()


def test_profile_table():
    log = activity()
    t = assign_types(fact([[1, 0], [0, 1], [0, 1]]))
    t = type(t)(("A", "B", "V"), t.types, t.strengths, t.components)
    rows = {(r.type, r.variable, r.level): (r.count, r.fraction) for r in profile_types(t, log)}
    assert rows[(0, "passed", "true")] == (1, 1.0)
    assert rows[(1, "passed", UNKNOWN)] == (1, 0.5) and rows[(1, "passed", "false")] == (1, 0.5)
    assert rows[(1, "age_band", "55+")] == (1, 0.5)
    assert rows[(0, "posts", "2-5")] == (1, 1.0)
    assert rows[(0, "views", "2-5")] == (1, 1.0)


def test_profile_without_demographics():
    log = make_log([dict(learner_id="Z", thread_id="t", timestamp=1, kind="post", text="x")])
    t = assign_types(fact([[1.0]]))
    t = type(t)(("Z",), t.types, t.strengths, t.components)
    demo = [r for r in profile_types(t, log) if r.variable in ("education", "country", "age_band")]
    assert all(r.level == UNKNOWN and r.fraction == 1.0 for r in demo)
