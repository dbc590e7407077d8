import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from stl_splitter.monitor import (
    RobustnessMonitor,
    WorkList,
    batch_robustness,
    sliding_max,
    sliding_min,
    worklist_init,
    worklist_robustness,
    worklist_update,
)
from stl_splitter.oracles import (
    boolean_satisfaction,
    coordinate_predicates,
    naive_window,
    random_formula,
    random_trace,
)
from stl_splitter.stl import INF, Always, And, Eventually, Interval, Not, Once, Pred, parse_formula

PREDS = coordinate_predicates()


def _scalar(values):
    return [np.array([v, 0.0, 0.0]) for v in values]


# --- sliding windows -------------------------------------------------------


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.integers(1, 12))
def test_sliding_windows_match_scan(values, width):
    assert sliding_min(values, width) == naive_window(values, width, min)
    assert sliding_max(values, width) == naive_window(values, width, max)


def test_sliding_window_hand_example():
    assert sliding_min([3, 1, 4, 1, 5, 9, 2], 3) == [1, 1, 1, 1, 2, 2, 2]
    assert sliding_max([3, 1, 4, 1, 5, 9, 2], 3) == [4, 4, 5, 9, 9, 9, 2]


# --- batch semantics: hand-computed values --------------------------------


def test_predicate_and_boolean_ops():
    X = _scalar([2.0])
    assert batch_robustness(Pred("p"), X, PREDS) == 2.0
    assert batch_robustness(Not(Pred("p")), X, PREDS) == -2.0
    assert batch_robustness(parse_formula("p and q"), X, PREDS) == 0.0
    assert batch_robustness(parse_formula("p -> q"), X, PREDS) == 0.0
    assert batch_robustness(parse_formula("true"), X, PREDS) == math.inf


def test_always_and_eventually_clip_to_prefix():
    X = _scalar([3.0, -1.0, 2.0])
    g = Always(Interval(0, INF), Pred("p"))
    f = Eventually(Interval(1, 5), Pred("p"))
    assert batch_robustness(g, X, PREDS) == -1.0
    assert batch_robustness(g, X, PREDS, 0, 0) == 3.0
    assert batch_robustness(f, X, PREDS) == 2.0
    # empty future window: sup over nothing
    assert batch_robustness(f, X, PREDS, 0, 0) == -math.inf


def test_until_and_past():
    X = _scalar([1.0, 2.0, -3.0, 4.0])
    until = parse_formula("p U[0,inf] q")
    X = [np.array([a, b, 0.0]) for a, b in [(1, -5), (2, -1), (-3, 6), (4, 7)]]
    # the left operand must hold up to and including the witness step:
    # j=0: min(-5, 1), j=1: min(-1, 1), j=2: min(6, -3), j=3: min(7, -3)
    assert batch_robustness(until, X, PREDS) == -1.0
    X = _scalar([1.0, 2.0, -3.0, 4.0])
    h = parse_formula("H[0,inf] p")
    o = parse_formula("O[1,2] p")
    assert batch_robustness(h, X, PREDS, 3) == -3.0
    assert batch_robustness(o, X, PREDS, 3) == 2.0
    assert batch_robustness(o, X, PREDS, 0) == -math.inf


# --- online work-list ------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_worklist_matches_batch_property(seed):
    rng = np.random.default_rng(seed)
    f = random_formula(rng, int(rng.integers(1, 5)))
    X = random_trace(rng, int(rng.integers(1, 30)))
    wl = WorkList(f, PREDS)
    for t in range(len(X)):
        online = wl.update(X[t])
        batch = batch_robustness(f, X, PREDS, 0, t)
        assert online == batch or abs(online - batch) <= 1e-9


def test_worklist_handles_shared_subtrees():
    ci = Pred("p")
    guard = Once(Interval(0, 3), And(ci, Not(ci)))
    f = Always(Interval(0, INF), And(Not(guard), And(ci, Pred("q"))))
    X = random_trace(np.random.default_rng(3), 12)
    wl = WorkList(f, PREDS)
    for t in range(len(X)):
        assert wl.update(X[t]) == pytest.approx(batch_robustness(f, X, PREDS, 0, t), abs=1e-12)


def test_worklist_copy_is_independent():
    f = parse_formula("G[0,inf] F[0,2] p")
    X = random_trace(np.random.default_rng(0), 10)
    wl = WorkList(f, PREDS)
    for x in X[:5]:
        wl.update(x)
    other = wl.copy()
    for x in X[5:]:
        wl.update(x)
    assert other.watermark == 4
    assert other.robustness() == batch_robustness(f, X, PREDS, 0, 4)
    assert wl.robustness() == batch_robustness(f, X, PREDS, 0, 9)


def test_worklist_rejects_state_past_final_step():
    wl = worklist_init(parse_formula("G[0,inf] p"), PREDS, final_step=2)
    for x in _scalar([1, 2, 3]):
        worklist_update(wl, x)
    assert worklist_robustness(wl) == 1.0
    with pytest.raises(ValueError, match="final timestep"):
        wl.update(np.zeros(3))


def test_worklist_errors():
    with pytest.raises(KeyError, match="no binding"):
        WorkList(Pred("zz"), PREDS)
    with pytest.raises(ValueError, match="no data"):
        WorkList(Pred("p"), PREDS).robustness()


def test_levels_never_increase_under_always_with_past_body():
    # future operators inside G may raise a prefix level; past ones cannot
    f = parse_formula("G[0,inf] (p or O[0,3] q)")
    X = random_trace(np.random.default_rng(11), 40)
    wl = WorkList(f, PREDS)
    levels = [wl.update(x) for x in X]
    assert all(b <= a for a, b in zip(levels, levels[1:]))


# --- sign soundness ---------------------------------------------------------


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sign_agrees_with_boolean_semantics(seed):
    rng = np.random.default_rng(seed)
    f = random_formula(rng, int(rng.integers(1, 5)))
    X = random_trace(rng, int(rng.integers(1, 21)))
    rho = batch_robustness(f, X, PREDS)
    if rho != 0:
        assert (rho > 0) == boolean_satisfaction(f, X, PREDS)


# --- transformer wrapper ----------------------------------------------------


def test_robustness_monitor_transformer():
    mon = RobustnessMonitor("G[0,inf] p", PREDS)
    X = np.array([[2.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    assert list(mon.fit_transform(X)) == [2.0, 1.0, 1.0]
    assert mon.score_trace(X) == 1.0
    assert clone(mon).get_params() == {"formula": "G[0,inf] p", "predicates": PREDS}


def test_robustness_monitor_validates_input():
    mon = RobustnessMonitor("G[0,inf] p", PREDS).fit()
    with pytest.raises(ValueError):
        mon.transform(np.array([[np.nan, 0, 0]]))
    with pytest.raises(ValueError, match="formula is required"):
        RobustnessMonitor().fit()
