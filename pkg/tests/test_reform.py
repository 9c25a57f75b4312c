import numpy as np
import pytest
from hypothesis import given, strategies as st

from drilmpc.numerics import LinearProgram, solve_lp
from drilmpc.reform import (AffineConstraint, ConstraintAtomValues, ReformError, constant_constraint,
                            dual_evaluator, emit_dual_block, eval_worst_case_cvar_dual,
                            option_risks, primal_evaluator, random_instance,
                            reformulation_errors, risk_cut, state_risk)
from drilmpc.risk import (AmbiguitySet, DiscreteDistribution, Metric, RiskSpec, worst_case_cvar,
                          worst_case_cvar_tv_oracle, worst_case_cvar_w1_oracle)

TWO = DiscreteDistribution([0.0, 1.0], [0.5, 0.5])
TV = AmbiguitySet("tv", 0.25, TWO)
RISK = RiskSpec(0.5, 0.0)


def block_feasible(block, x):
    """Is there an auxiliary vector making the block's rows hold at state ``x``?"""
    A_s, A_a, lo, hi = block.rows(with_link=True)
    shift = A_s @ np.atleast_1d(x) if A_s.shape[1] else np.zeros(A_s.shape[0])
    lp = LinearProgram(np.zeros(block.n_aux), A_a, lo - shift, hi - shift, block.aux_lb, block.aux_ub)
    return solve_lp(lp).ok


# -- frozen examples --------------------------------------------------------

def test_dual_examples():
    assert eval_worst_case_cvar_dual([0, 1], AmbiguitySet("tv", 0.0, TWO), 1.0) == pytest.approx(0.5, abs=1e-12)
    assert eval_worst_case_cvar_dual([0, 1], TV, 0.5) == pytest.approx(1.0, abs=1e-12)
    point0 = DiscreteDistribution([0.0, 1.0], [1.0, 0.0])
    assert eval_worst_case_cvar_dual([0, 1], AmbiguitySet("wasserstein", 0.3, point0), 1.0) == pytest.approx(0.3, abs=1e-12)


def test_w1_dual_with_small_beta():
    # sup moves 0.3 mass to atom 1, then CVaR_0.5 of (0.7, 0.3) on values (0, 1) is 0.6
    point0 = DiscreteDistribution([0.0, 1.0], [1.0, 0.0])
    amb = AmbiguitySet("wasserstein", 0.3, point0)
    assert eval_worst_case_cvar_dual([0, 1], amb, 0.5) == pytest.approx(0.6, abs=1e-12)
    assert worst_case_cvar_w1_oracle([0, 1], amb, 0.5) == pytest.approx(0.6, abs=1e-12)


@pytest.mark.parametrize("metric", ["tv", "wasserstein"])
def test_constant_blocks(metric):
    amb = AmbiguitySet(metric, 0.25, TWO)
    neg = emit_dual_block(ConstraintAtomValues.fixed([-1.0, -1.0]), amb, RiskSpec(0.5, 0.0))
    pos = emit_dual_block(ConstraintAtomValues.fixed([1.0, 1.0]), amb, RiskSpec(0.5, 0.0))
    assert block_feasible(neg, np.zeros(0))
    assert not block_feasible(pos, np.zeros(0))


def test_variable_counts():
    forms = ConstraintAtomValues.affine(np.ones((2, 1)), [0.0, -1.0])
    tv = emit_dual_block(forms, TV, RISK)
    w1 = emit_dual_block(forms, AmbiguitySet("wasserstein", 0.25, TWO), RISK)
    L = 2
    assert tv.n_aux == 3 + 2 * L + L
    assert w1.n_aux == 2 + L + L
    assert tv.metric is Metric.TV and w1.metric is Metric.WASSERSTEIN


def test_scalar_boundary_is_zero():
    forms = ConstraintAtomValues.affine(np.ones((2, 1)), [0.0, -1.0])  # g = x - w
    block = emit_dual_block(forms, TV, RISK)
    lo, hi = -2.0, 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if eval_worst_case_cvar_dual(forms.evaluate(np.array([mid])), TV, 0.5) <= 0.0:
            lo = mid
        else:
            hi = mid
    assert lo == pytest.approx(0.0, abs=1e-12)
    assert block_feasible(block, [-1e-6]) and block_feasible(block, [0.0])
    assert not block_feasible(block, [1e-6])


def test_bad_inputs():
    with pytest.raises(ValueError):
        ConstraintAtomValues(np.zeros((0, 2, 1)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        emit_dual_block(ConstraintAtomValues.fixed([1.0, 2.0, 3.0]), TV, RISK)
    with pytest.raises(ValueError):
        eval_worst_case_cvar_dual(ConstraintAtomValues.affine(np.ones((2, 1)), [0, 0]), TV, 0.5)


def test_reform_error_type():
    assert issubclass(ReformError, RuntimeError)


# -- equivalence with the oracles -------------------------------------------

@pytest.mark.parametrize("metric", ["tv", "wasserstein"])
def test_dual_matches_oracle(metric):
    rng = np.random.default_rng(20)
    oracle = worst_case_cvar_tv_oracle if metric == "tv" else worst_case_cvar_w1_oracle
    for _ in range(100):
        z, amb, beta = random_instance(rng, metric)
        assert eval_worst_case_cvar_dual(z, amb, beta) == pytest.approx(oracle(z, amb, beta), abs=1e-9)


def test_reformulation_errors_small():
    errs = reformulation_errors(30, seed=3)
    assert set(errs) == {"tv", "wasserstein"}
    assert max(errs.values()) <= 1e-9


def test_evaluators_agree():
    rng = np.random.default_rng(5)
    z, amb, beta = random_instance(rng, "wasserstein")
    V = rng.normal(size=(6, z.size))
    assert np.allclose(dual_evaluator(V, amb, beta), primal_evaluator(V, amb, beta), atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.sampled_from(["tv", "wasserstein"]))
def test_block_matches_evaluator(seed, metric):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, 6))
    atoms = np.sort(rng.choice(np.linspace(-1, 1, 21), L, replace=False))
    ref = DiscreteDistribution(atoms, rng.dirichlet(np.ones(L)))
    amb = AmbiguitySet(metric, float(rng.uniform(0, 0.6)), ref)
    beta = float(rng.choice([0.1, 0.2, 0.5, 1.0]))
    forms = ConstraintAtomValues(rng.normal(size=(2, L, 2)), rng.normal(size=(2, L)))
    delta = float(rng.normal())
    block = emit_dual_block(forms, amb, RiskSpec(beta, delta))
    x = rng.normal(size=2)
    v = eval_worst_case_cvar_dual(forms.evaluate(x), amb, beta)
    if abs(v - delta) > 1e-7:
        assert block_feasible(block, x) == (v <= delta)


def test_feasible_set_shrinks_with_radius():
    forms = ConstraintAtomValues.affine(np.ones((2, 1)), [0.0, -1.0])
    grid = np.linspace(-1.5, 1.5, 61)
    prev = None
    for theta in [0.0, 0.1, 0.25, 0.5, 1.0]:
        amb = AmbiguitySet("tv", theta, TWO)
        ok = {round(x, 9) for x in grid
              if eval_worst_case_cvar_dual(forms.evaluate(np.array([x])), amb, 0.5) <= 1e-12}
        if prev is not None:
            assert ok <= prev
        prev = ok


# -- cuts and constraint models ---------------------------------------------

@pytest.mark.parametrize("metric", ["tv", "wasserstein"])
def test_risk_cut_is_tight_minorant(metric):
    rng = np.random.default_rng(9)
    for _ in range(30):
        L = int(rng.integers(2, 7))
        atoms = np.sort(rng.choice(np.linspace(-1, 1, 21), L, replace=False))
        amb = AmbiguitySet(metric, float(rng.uniform(0, 0.8)), DiscreteDistribution(atoms, rng.dirichlet(np.ones(L))))
        beta = float(rng.choice([0.2, 0.5, 1.0]))
        forms = ConstraintAtomValues(rng.normal(size=(3, L, 2)), rng.normal(size=(3, L)))
        x = rng.normal(size=2)
        alpha, c, val = risk_cut(forms, x, amb, beta)
        true = worst_case_cvar(forms.evaluate(x)[None], amb, beta)[0]
        assert val == pytest.approx(true, abs=1e-9)
        assert alpha @ x + c == pytest.approx(true, abs=1e-9)
        for y in rng.normal(size=(5, 2)) * 3:
            assert alpha @ y + c <= worst_case_cvar(forms.evaluate(y)[None], amb, beta)[0] + 1e-9


def test_option_risks_and_state_risk():
    a = ConstraintAtomValues.affine(np.ones((2, 1)), [0.0, -1.0])
    b = ConstraintAtomValues.affine(-np.ones((2, 1)), [0.0, -1.0])

    class TwoModels:
        def options(self):
            return (a, b)

    R = option_risks(TwoModels(), np.array([[0.5], [-0.5]]), TV, 0.5)
    assert R.shape == (2, 2)
    assert np.allclose(R[:, 0], [0.5, -0.5]) and np.allclose(R[:, 1], [-0.5, 0.5])
    assert np.allclose(state_risk(TwoModels(), np.array([[0.5], [-0.5]]), TV, 0.5), [-0.5, -0.5])


def test_constant_constraint():
    g = constant_constraint(-1.0, 3, 2)
    assert isinstance(g, AffineConstraint)
    assert np.allclose(g.exact_values(np.ones(2)), -1.0)
