import numpy as np
import pytest
from hypothesis import given, strategies as st

from drilmpc.numerics import (INF, LinearProgram, QuadraticProgram, SolverInputError, Status,
                              solve_lp, solve_qp, solve_qp_dense)


# -- LP ---------------------------------------------------------------------

def test_lp_single_bound():
    r = solve_lp(LinearProgram([1.0], lb=[1.0]))
    assert r.kind is Status.OPTIMAL
    assert r.x[0] == pytest.approx(1.0, abs=1e-12)
    assert r.objective == pytest.approx(1.0, abs=1e-12)


def test_lp_simplex_vertex():
    r = solve_lp(LinearProgram([-1.0, -1.0], [[1.0, 1.0]], [-INF], [1.0], lb=[0, 0]))
    assert r.ok
    assert r.objective == pytest.approx(-1.0, abs=1e-12)


def test_lp_two_atom_transport():
    # move mass from atom 0 to atom 1 at unit cost, budget 0.3
    # variables kappa[i, l] row-major; column sums are the reference weights (1, 0)
    c = -np.array([0.0, 0.0, 1.0, 0.0])
    A = np.array([[1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 1]], dtype=float)
    r = solve_lp(LinearProgram(c, A, [1, 0, -INF], [1, 0, 0.3], lb=np.zeros(4)))
    assert -r.objective == pytest.approx(0.3, abs=1e-12)


def test_lp_infeasible_and_unbounded():
    inf = solve_lp(LinearProgram([1.0], [[1.0]], [2.0], [INF], ub=[1.0]))
    assert inf.kind is Status.INFEASIBLE
    unb = solve_lp(LinearProgram([-1.0], lb=[0.0]))
    assert unb.kind is Status.UNBOUNDED


def test_lp_dimension_mismatch():
    with pytest.raises(SolverInputError):
        LinearProgram([1.0, 2.0], [[1.0]])
    with pytest.raises(SolverInputError):
        LinearProgram([1.0], [[1.0]], [2.0], [1.0])


def _planted_lp(rng):
    """LP with a known optimal value, built from chosen KKT multipliers."""
    n, m = int(rng.integers(2, 9)), int(rng.integers(1, 9))
    A = rng.normal(size=(m, n))
    z = np.where(rng.random(n) < 0.4, 0.0, rng.uniform(0.1, 2.0, n))
    active = rng.random(m) < 0.5
    b = A @ z + np.where(active, 0.0, rng.uniform(0.1, 1.0, m))
    y = np.where(active, rng.uniform(0.1, 1.0, m), 0.0)
    red = np.where(z == 0, rng.uniform(0.0, 1.0, n), 0.0)
    c = -A.T @ y + red
    return LinearProgram(c, A, np.full(m, -INF), b, lb=np.zeros(n)), float(c @ z)


def test_lp_planted_optima():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        lp, opt = _planted_lp(rng)
        r = solve_lp(lp)
        assert r.ok
        worst = max(worst, abs(r.objective - opt))
        assert np.all(lp.A @ r.x <= lp.u + 1e-8) and np.all(r.x >= -1e-8)
    assert worst <= 1e-7


# -- ADMM QP ----------------------------------------------------------------

def test_qp_constant_term():
    r = solve_qp(QuadraticProgram([[2.0]], [-2.0], r=1.0))
    assert r.ok
    assert r.x[0] == pytest.approx(1.0, abs=1e-8)
    assert r.objective == pytest.approx(0.0, abs=1e-10)


def test_qp_active_bound():
    r = solve_qp(QuadraticProgram([[2.0]], [0.0], lb=[2.0]))
    assert r.x[0] == pytest.approx(2.0, abs=1e-8)
    assert r.objective == pytest.approx(4.0, abs=1e-8)


def test_qp_integrator_ocp():
    # min 1 + 0.1 u^2 + 1.1 (1 + u)^2 over u in [-1, 1]
    r = solve_qp(QuadraticProgram([[2.4]], [2.2], lb=[-1.0], ub=[1.0], r=2.1))
    assert r.x[0] == pytest.approx(-11 / 12, abs=1e-8)
    assert r.objective == pytest.approx(1.0916666666666667, abs=1e-8)


def test_qp_rejects_indefinite():
    with pytest.raises(SolverInputError):
        QuadraticProgram([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])


def test_qp_infeasible():
    r = solve_qp(QuadraticProgram([[1.0]], [0.0], [[1.0], [1.0]], [1.0, -INF], [INF, 0.0]))
    assert r.kind is Status.INFEASIBLE


def _projected_gradient(P, q, lo, hi, iters=20000):
    L = np.linalg.eigvalsh(P).max()
    z = np.clip(np.zeros_like(q), lo, hi)
    for _ in range(iters):
        z = np.clip(z - (P @ z + q) / L, lo, hi)
    return z


def test_qp_matches_projected_gradient():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.5 * np.eye(n)
        q = rng.normal(size=n) * 3
        lo, hi = -rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, n)
        r = solve_qp(QuadraticProgram(P, q, lb=lo, ub=hi))
        z = _projected_gradient(P, q, lo, hi)
        ref = 0.5 * z @ P @ z + q @ z
        assert r.objective == pytest.approx(ref, abs=1e-5)


def test_qp_deterministic():
    rng = np.random.default_rng(5)
    M = rng.normal(size=(4, 4))
    qp = QuadraticProgram(M @ M.T, rng.normal(size=4), rng.normal(size=(3, 4)),
                          -np.ones(3), np.ones(3))
    a, b = solve_qp(qp), solve_qp(qp)
    assert a.kind is b.kind and a.iterations == b.iterations
    assert np.array_equal(a.x, b.x) and a.objective == b.objective


# -- dense active-set QP ----------------------------------------------------

def test_dense_qp_matches_admm():
    rng = np.random.default_rng(0)
    for k in range(150):
        n = int(rng.integers(1, 12))
        me = int(rng.integers(0, min(n, 4)))
        mi = int(rng.integers(0, 25))
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.1 * np.eye(n)
        q = rng.normal(size=n)
        x0 = rng.normal(size=n)
        Ae = rng.normal(size=(me, n))
        be = Ae @ x0
        if k % 3 == 0 and me:
            # a dependent but consistent equality row
            Ae, be = np.vstack([Ae, 2 * Ae[:1]]), np.concatenate([be, 2 * be[:1]])
        G = rng.normal(size=(mi, n))
        h = G @ x0 + rng.uniform(0, 1, mi)
        r = solve_qp_dense(P, q, Ae, be, G, h)
        assert r.ok
        ref = solve_qp(QuadraticProgram(P, q, np.vstack([Ae, G]),
                                        np.concatenate([be, np.full(mi, -INF)]),
                                        np.concatenate([be, h])))
        assert r.objective == pytest.approx(ref.objective, abs=1e-7 * (1 + abs(ref.objective)))
        assert r.primal_residual <= 1e-9


def test_dense_qp_infeasible():
    G = np.array([[1.0, 0.0], [-1.0, 0.0]])
    r = solve_qp_dense(np.eye(2), np.zeros(2), G=G, h=np.array([-1.0, -1.0]))
    assert r.kind is Status.INFEASIBLE
    r = solve_qp_dense(np.eye(2), np.zeros(2), np.array([[1.0, 0], [1.0, 0]]), np.array([0.0, 1.0]))
    assert r.kind is Status.INFEASIBLE


def test_dense_qp_requires_pd():
    with pytest.raises(SolverInputError):
        solve_qp_dense(np.diag([1.0, 0.0]), np.zeros(2))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_dense_qp_kkt(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    P = M @ M.T + np.eye(n)
    q = rng.normal(size=n)
    G = np.vstack([np.eye(n), -np.eye(n)])
    h = np.ones(2 * n)
    r = solve_qp_dense(P, q, G=G, h=h)
    y = r.y
    assert np.all(y >= -1e-10)
    assert np.allclose(P @ r.x + q + G.T @ y, 0.0, atol=1e-8)
    assert np.all(np.abs(y * (G @ r.x - h)) <= 1e-8)
