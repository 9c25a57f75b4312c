import math

import numpy as np
import pytest
from sklearn.base import clone

from drilmpc.mpc_loop import (IterativeDRMPC, RunConfig, StepCapError, Termination,
                              assert_lyapunov_decrease, build_ambiguity, check_visited_safety,
                              dr_mpc, initial_safe_set, run_iterations, write_iteration_table,
                              write_summary)
from drilmpc.ocp import check_q_conditions, solve_fhocp
from drilmpc.safe_set import SafeEntry, SafeSet, is_subset
from drilmpc.scenarios import IntegratorScenario, OneStepScenario


class AtTarget(IntegratorScenario):
    def __init__(self):
        super().__init__()
        self.x_S = np.array([0.0])

    def robust_trajectory(self):
        return np.array([[0.0]]), np.zeros((0, 1))


def _amb(scenario, cfg):
    cfg = cfg.resolve(scenario)
    return build_ambiguity(scenario, list(range(len(scenario.atoms))), cfg)


def test_start_at_target():
    sc = AtTarget()
    cfg = RunConfig()
    ss = SafeSet((SafeEntry(0, 0, (0.0,), 0.0),), frozenset({0}), {0: 0.0})
    rec = dr_mpc(ss, _amb(sc, cfg), cfg, sc)
    assert rec.T == 0 and rec.cost == 0.0
    assert rec.termination is Termination.EXACT_TARGET
    rep = assert_lyapunov_decrease(rec)
    assert rep.passed and rep.checked == 0


def test_integrator_epsilon_ball():
    sc = IntegratorScenario()
    cfg = RunConfig(epsilon=1e-3)
    rec = dr_mpc(initial_safe_set(sc), _amb(sc, cfg), cfg, sc)
    assert rec.termination is Termination.EPSILON_BALL
    a = np.abs(rec.states[:, 0])
    assert np.all(np.diff(a) < 0)
    assert a[-1] <= 1e-3
    # first step matches the open-loop optimum from x = 1
    assert rec.inputs[0, 0] == pytest.approx(-11 / 12, abs=1e-9)
    assert assert_lyapunov_decrease(rec, 1e-5).passed


def test_one_step_exact_target():
    sc = OneStepScenario()
    assert check_q_conditions(1, 0.5, 1, 1, 1, 1, 2.0).holds_a
    cfg = RunConfig(epsilon=1e-9).resolve(sc)
    ss = initial_safe_set(sc)
    amb = _amb(sc, cfg)
    rec = dr_mpc(ss, amb, cfg, sc)
    assert rec.termination is Termination.EXACT_TARGET
    J0 = rec.objectives[0]
    r_bar = sc.min_cost_outside_reach()
    # the infimum outside the box is 1.0, attained only on its boundary
    assert r_bar == pytest.approx(1.01)
    assert rec.T <= math.ceil(J0 / r_bar) + 1
    assert rec.T <= math.ceil(J0 / 1.0) + 1
    assert np.array_equal(rec.states[-1], sc.x_F)
    assert rec.objectives[-1] == 0.0
    assert assert_lyapunov_decrease(rec).passed


def test_misspecified_terminal_value_is_reported():
    sc = IntegratorScenario()
    # Q-bar(0) should be 0; the +1 makes the stored value at 0.5 inconsistent
    entries = (SafeEntry(0, 1, (0.5,), 0.275), SafeEntry(0, 2, (0.0,), 0.0 + 1.0))
    ss = SafeSet(entries, frozenset({0}), {0: 1.3})
    cfg = RunConfig(t_max=6, strict=False)
    rec = dr_mpc(ss, _amb(sc, cfg), cfg, sc)
    rep = assert_lyapunov_decrease(rec, 1e-5)
    assert not rep.passed and rep.max_violation > 1e-3
    with pytest.raises(StepCapError):
        dr_mpc(ss, _amb(sc, cfg), RunConfig(t_max=6), sc)


def test_zero_iterations_and_sample_count():
    sc = IntegratorScenario()
    assert len(run_iterations(RunConfig(iterations=0), sc)) == 0
    res = run_iterations(RunConfig(iterations=2, seed=3), sc)
    assert res[0].n_samples == sc.n0 + res[0].T
    assert res[1].n_samples == sc.n0 + res[0].T + res[1].T
    assert len(res[0].samples) == res[0].T


def test_frozen_monotone_and_nested():
    sc = IntegratorScenario()
    res = run_iterations(RunConfig(iterations=4, frozen_ambiguity=True), sc, keep_safe_sets=True)
    costs = [r.cost for r in res]
    assert all(b <= a + 1e-6 for a, b in zip(costs, costs[1:]))
    assert all(is_subset(a, b) for a, b in zip(res.safe_sets, res.safe_sets[1:]))
    assert all(r.termination is Termination.EPSILON_BALL for r in res)
    assert len({a.radius for a in res.ambiguity}) == 1


def test_visited_states_safe():
    sc = IntegratorScenario()
    res = run_iterations(RunConfig(iterations=2), sc)
    for rec, amb in zip(res, res.ambiguity):
        assert check_visited_safety(rec, amb, sc, res.config) <= 1e-6


def test_deterministic_under_seed():
    sc = IntegratorScenario()
    a = run_iterations(RunConfig(iterations=2, seed=11), sc)
    b = run_iterations(RunConfig(iterations=2, seed=11), sc)
    assert [r.samples.tolist() for r in a] == [r.samples.tolist() for r in b]
    assert [r.cost for r in a] == [r.cost for r in b]


def test_run_config_validation():
    assert RunConfig().theta == 0.05
    assert RunConfig(zeta=0.9).theta is None
    for bad in (dict(theta=0.1, zeta=0.9), dict(theta=-1.0), dict(epsilon=-1.0), dict(t_max=0),
                dict(zeta=0.9, metric="wasserstein"), dict(evaluator="x")):
        with pytest.raises(ValueError):
            RunConfig(**bad)


def test_outputs(tmp_path):
    sc = IntegratorScenario()
    res = run_iterations(RunConfig(iterations=2), sc)
    write_iteration_table(res.records, tmp_path / "it.csv")
    write_summary(res, tmp_path / "s.json", {"scenario": sc.name})
    lines = (tmp_path / "it.csv").read_text().splitlines()
    assert len(lines) == 3
    assert "termination" in lines[0]
    assert '"scenario": "integrator"' in (tmp_path / "s.json").read_text()


def test_estimator_api():
    sc = IntegratorScenario()
    est = IterativeDRMPC(iterations=2)
    assert clone(est).get_params()["iterations"] == 2
    est.fit(sc)
    assert est.costs_.shape == (2,)
    u = est.predict(np.array([[1.0], [0.5]]))
    assert u.shape == (2, 1)
    assert np.all(np.isfinite(u)) and np.all(np.abs(u) <= 1 + 1e-9)
    assert u[0, 0] < 0 and u[1, 0] < 0
    assert est.score() == -est.costs_[-1]
    with pytest.raises(ValueError):
        est.predict(np.zeros((1, 2)))
