import numpy as np
import pytest
from hypothesis import given, strategies as st

from drilmpc.reform import AffineConstraint, ConstraintAtomValues, constant_constraint, eval_worst_case_cvar_dual
from drilmpc.risk import AmbiguitySet, DiscreteDistribution, RiskSpec
from drilmpc.safe_set import (SafeEntry, SafeSet, TrajectoryError, append_trajectory, cost_to_go,
                              is_subset, min_cost_to_go, prune_unsafe, unsafe_ids)


def quad(x, u):
    return float(x @ x + 0.1 * u @ u)


X3 = [1.0, 0.5, 0.0]
U3 = [-0.5, -0.5]
TWO = DiscreteDistribution([0.0, 1.0], [0.5, 0.5])
TV = AmbiguitySet("tv", 0.25, TWO)
X_MINUS_W = AffineConstraint(ConstraintAtomValues.affine(np.ones((2, 1)), [0.0, -1.0]))


def test_cost_to_go_examples():
    assert cost_to_go(X3, U3, quad, 0, x_F=[0.0]) == pytest.approx(1.3, abs=1e-12)
    assert cost_to_go(X3, U3, quad, 1, x_F=[0.0]) == pytest.approx(0.275, abs=1e-12)
    assert cost_to_go([[0.0]], [], quad, 0, x_F=[0.0]) == 0.0


def test_cost_to_go_errors():
    with pytest.raises(TrajectoryError):
        cost_to_go(X3, U3, quad, 0, x_F=[1.0])
    with pytest.raises(TrajectoryError):
        cost_to_go(X3, [0.1], quad)
    with pytest.raises(TrajectoryError):
        cost_to_go(X3, U3, quad, 5)


def test_min_cost_to_go_examples():
    x = (0.25, -1.0)
    ss = SafeSet((SafeEntry(1, 1, x, 5.0), SafeEntry(2, 1, x, 3.0)), frozenset({1, 2}))
    assert min_cost_to_go(ss, x) == 3.0
    assert min_cost_to_go(ss, (0.25, -1.0 + 1e-10)) == 3.0
    assert min_cost_to_go(ss, (0.25, -1.1)) == np.inf
    one = SafeSet((SafeEntry(1, 1, x, 7.0),), frozenset({1}))
    assert min_cost_to_go(one, x) == 7.0


def test_append_examples():
    ss = append_trajectory(SafeSet(), 1, [2.0, 1.0, 0.5, 0.0], [-1.0, -0.5, -0.5], quad, x_F=[0.0])
    assert len(ss) == 3
    assert [e.t for e in ss.entries] == [1, 2, 3]
    assert ss.entries[-1].cost == 0.0
    assert ss.entries[0].cost == pytest.approx(1.3)
    assert ss.totals[1] == pytest.approx(4 + 0.1 + 1.3)
    both = append_trajectory(ss, 2, [2.0, 1.0, 0.5, 0.0], [-1.0, -0.5, -0.5], quad)
    assert len(both) == 6 and both.ids == {1, 2}
    assert min_cost_to_go(both, [1.0]) == pytest.approx(1.3)


def test_entry_and_set_validation():
    with pytest.raises(ValueError):
        SafeEntry(0, 0, (0.0,), -1.0)
    with pytest.raises(ValueError):
        SafeEntry(0, 0, (0.0,), np.inf)
    with pytest.raises(ValueError):
        SafeSet((SafeEntry(3, 1, (0.0,), 0.0),), frozenset({1}))


def _two_trajectories():
    ss = append_trajectory(SafeSet(), 0, [-1.0, -0.5, -0.2], [0.5, 0.3], quad)
    return append_trajectory(ss, 1, [-1.0, 0.1, -0.3], [1.1, -0.4], quad)


def test_prune_examples():
    ss = _two_trajectories()
    risk = RiskSpec(0.5, 0.0)
    assert eval_worst_case_cvar_dual(X_MINUS_W.forms.evaluate(np.array([0.1])), TV, 0.5) == pytest.approx(0.1)
    out = prune_unsafe(ss, TV, X_MINUS_W, risk)
    assert out.ids == {0}
    assert out.trajectory(0) == ss.trajectory(0)
    assert 1 not in out.totals
    assert prune_unsafe(ss, TV, constant_constraint(-1.0, 2, 1), risk) is ss
    assert prune_unsafe(ss, TV, constant_constraint(1.0, 2, 1), risk).ids == frozenset()
    assert unsafe_ids(SafeSet(), TV, X_MINUS_W, risk) == set()


def test_prune_recheck_pass():
    rng = np.random.default_rng(4)
    ss = SafeSet()
    for j in range(8):
        X = np.concatenate([[-1.0], rng.uniform(-1, 0.3, 4)])
        ss = append_trajectory(ss, j, X, np.diff(X), quad)
    risk = RiskSpec(0.5, 0.0)
    out = prune_unsafe(ss, TV, X_MINUS_W, risk)
    for e in out.entries:
        assert eval_worst_case_cvar_dual(X_MINUS_W.forms.evaluate(np.array(e.state)), TV, 0.5) <= 1e-7
    assert out.ids == ss.ids - unsafe_ids(ss, TV, X_MINUS_W, risk)
    assert is_subset(out, ss)


def test_dumps_roundtrip():
    ss = _two_trajectories()
    back = SafeSet.loads(ss.dumps())
    assert set(back.entries) == set(ss.entries)
    assert back.ids == ss.ids
    assert ss.dumps().splitlines()[1].split()[:2] == ["0", "1"]


def test_terminal_candidates_canonical():
    x = (0.5,)
    ss = SafeSet((SafeEntry(2, 1, x, 4.0), SafeEntry(1, 2, (0.0,), 0.0), SafeEntry(1, 1, x, 2.0)),
                 frozenset({1, 2}))
    S, V, W = ss.terminal_candidates()
    assert S.tolist() == [[0.0], [0.5]]
    assert V.tolist() == [0.0, 2.0]
    assert W[1].iteration == 1
    assert ss.successor(W[1]).state == (0.0,)
    assert ss.successor(ss.entries[1]) is ss.entries[1]


def test_best_iteration():
    ss = _two_trajectories()
    assert ss.best_iteration() == min(ss.totals, key=ss.totals.get)
    assert SafeSet().best_iteration() is None


@given(st.lists(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=4), min_size=1, max_size=5),
       st.floats(-2, 2, allow_nan=False))
def test_min_cost_nonincreasing_under_append(trajs, probe):
    ss = SafeSet()
    xs = [probe] + [v for tr in trajs for v in tr]
    for j, tr in enumerate(trajs):
        X = [probe] + tr
        before = {x: min_cost_to_go(ss, [x]) for x in xs}
        ss = append_trajectory(ss, j, X, np.diff(X), quad)
        for x, b in before.items():
            assert min_cost_to_go(ss, [x]) <= b
