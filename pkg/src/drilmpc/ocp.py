"""Finite-horizon DR-constrained OCP with a discrete terminal set.

The terminal constraint ``x_K in {stored states}`` is handled by enumerating
candidates.  Every candidate shares the same matrices; only the right-hand
side of the last dynamics block changes, so one factorisation gives an
equality-only lower bound for all of them.  Candidates are visited in order
of that bound and skipped once it cannot beat the incumbent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
import numpy as np
import scipy.linalg as sla

from .numerics import (AdmmSettings, LinearProgram, Status, solve_lp, solve_qp_batch,
                       solve_qp_dense)
from .reform import emit_dual_block, primal_evaluator, risk_cut
from .risk import AmbiguitySet, RiskSpec

log = logging.getLogger(__name__)

FEAS_TOL = 1e-10
DR_RETRY_SLACK = 1e-9
BATCH = 16
MAX_CUT_ROUNDS = 500


class OcpInfeasible(RuntimeError):
    """No terminal candidate admits a feasible plan."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class LinearDynamics:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"inconsistent dynamics shapes A{A.shape} B{B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)


@dataclass(frozen=True)
class StageCost:
    """``(x-x_F)'Q(x-x_F) + u'Ru``, or the norm form ``c_x|x-x_F| + c_u|u|``.

    The norm form is restricted to exponent one with the 1- or inf-norm so the
    OCP stays a linear program.
    """

    x_F: np.ndarray
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    c_x: float = 0.0
    c_u: float = 0.0
    norm_ord: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_F", np.asarray(self.x_F, dtype=float).reshape(-1))
        if self.norm_ord is None:
            Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
            R = np.atleast_2d(np.asarray(self.R, dtype=float))
            if np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-10:
                raise ValueError("Q must be positive semidefinite")
            if np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
                raise ValueError("R must be positive definite")
            object.__setattr__(self, "Q", Q)
            object.__setattr__(self, "R", R)
        else:
            if self.norm_ord not in (1, np.inf):
                raise ValueError("norm stage cost supports ord 1 or inf only")
            if self.c_x <= 0 or self.c_u < 0:
                raise ValueError("norm weights must satisfy c_x > 0, c_u >= 0")

    @classmethod
    def quadratic(cls, Q, R, x_F) -> "StageCost":
        return cls(x_F=x_F, Q=Q, R=R)

    @classmethod
    def norm(cls, c_x, c_u, x_F, ord=1) -> "StageCost":
        return cls(x_F=x_F, c_x=float(c_x), c_u=float(c_u), norm_ord=ord)

    @property
    def is_quadratic(self) -> bool:
        return self.norm_ord is None

    def state_cost(self, x) -> float:
        e = np.asarray(x, dtype=float) - self.x_F
        if self.is_quadratic:
            return float(e @ self.Q @ e)
        return self.c_x * float(np.linalg.norm(e, self.norm_ord))

    def input_cost(self, u) -> float:
        u = np.asarray(u, dtype=float).reshape(-1)
        if self.is_quadratic:
            return float(u @ self.R @ u)
        return self.c_u * float(np.linalg.norm(u, self.norm_ord))

    def __call__(self, x, u) -> float:
        return self.state_cost(x) + self.input_cost(u)


@dataclass(frozen=True)
class DRSpec:
    """Per-slot affine constraint forms; ``forms[0]`` is only checked at the fixed start state."""

    forms: tuple
    amb: AmbiguitySet
    risk: RiskSpec


@dataclass(frozen=True)
class FiniteHorizonProblem:
    K: int
    dynamics: LinearDynamics
    cost: StageCost
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    terminal_states: np.ndarray
    terminal_values: np.ndarray
    dr: DRSpec | None = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("horizon K must be at least 1")
        T = np.atleast_2d(np.asarray(self.terminal_states, dtype=float))
        v = np.asarray(self.terminal_values, dtype=float).reshape(-1)
        if T.shape[0] == 0:
            raise ValueError("terminal candidate list is empty")
        if T.shape[0] != v.shape[0] or T.shape[1] != self.dynamics.n_x:
            raise ValueError("terminal states/values have inconsistent shapes")
        object.__setattr__(self, "terminal_states", T)
        object.__setattr__(self, "terminal_values", v)
        for name, n in (("x_lo", self.dynamics.n_x), ("x_hi", self.dynamics.n_x),
                        ("u_lo", self.dynamics.n_u), ("u_hi", self.dynamics.n_u)):
            object.__setattr__(self, name, np.broadcast_to(
                np.asarray(getattr(self, name), dtype=float), (n,)).copy())
        if self.dr is not None and len(self.dr.forms) != self.K:
            raise ValueError(f"need {self.K} constraint forms, got {len(self.dr.forms)}")


@dataclass(frozen=True)
class OcpSolution:
    states: np.ndarray
    inputs: np.ndarray
    objective: float
    terminal_index: int
    n_solved: int = 0
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]


# -- assembly ---------------------------------------------------------------

class _Layout:
    def __init__(self, K, nx, nu):
        self.K, self.nx, self.nu = K, nx, nu
        self.nX = nx * (K - 1)
        self.nU = nu * K
        self.nz = self.nX + self.nU

    def x(self, k):
        """Columns of x_k for 1 <= k <= K-1."""
        s = (k - 1) * self.nx
        return np.arange(s, s + self.nx)

    def u(self, k):
        s = self.nX + k * self.nu
        return np.arange(s, s + self.nu)


def _dynamics_rows(p, lay, x0):
    """Equality rows E z = b0 + S @ xbar (S selects the last block, sign -1)."""
    A, B = p.dynamics.A, p.dynamics.B
    nx, K = lay.nx, lay.K
    E = np.zeros((nx * K, lay.nz))
    b0 = np.zeros(nx * K)
    for k in range(K):
        r = slice(k * nx, (k + 1) * nx)
        if k + 1 <= K - 1:
            E[r, lay.x(k + 1)] = np.eye(nx)
        if k >= 1:
            E[r, lay.x(k)] = -A
        else:
            b0[r] = A @ x0
        E[r, lay.u(k)] = -B
    return E, b0


def _rhs(b0, nx, xbars):
    R = np.repeat(b0[:, None], xbars.shape[0], axis=1)
    R[-nx:, :] -= xbars.T
    return R


def _quadratic_terms(p, lay, x0):
    Q, R, xF = p.cost.Q, p.cost.R, p.cost.x_F
    P = np.zeros((lay.nz, lay.nz))
    q = np.zeros(lay.nz)
    for k in range(1, lay.K):
        c = lay.x(k)
        P[np.ix_(c, c)] = 2 * Q
        q[c] = -2 * Q @ xF
    for k in range(lay.K):
        c = lay.u(k)
        P[np.ix_(c, c)] = 2 * R
    const = p.cost.state_cost(x0) + (lay.K - 1) * float(xF @ Q @ xF)
    return P, q, const


def _bounds(p, lay):
    lo = np.concatenate([np.tile(p.x_lo, lay.K - 1), np.tile(p.u_lo, lay.K)])
    hi = np.concatenate([np.tile(p.x_hi, lay.K - 1), np.tile(p.u_hi, lay.K)])
    return lo, hi


def _dr_blocks(p, lay):
    """Dual blocks for slots 1..K-1 as (G, lo, hi, aux_lb, aux_ub, link_mask) over [z, aux]."""
    if p.dr is None:
        return None
    blocks = []
    for k in range(1, lay.K):
        f = p.dr.forms[k]
        if f is not None:
            blocks.append(emit_dual_block(f, p.dr.amb, p.dr.risk, lay.x(k)))
    if not blocks:
        return None
    n_aux = sum(b.n_aux for b in blocks)
    n = lay.nz + n_aux
    G, lo, hi, alb, aub, link = [], [], [], [], [], []
    off = lay.nz
    for b in blocks:
        g, l, h = b.embed(n, off)
        mask = np.zeros(g.shape[0], dtype=bool)
        mask[-1] = True  # embed() appends the linking row last
        link.append(mask)
        G.append(g)
        lo.append(l)
        hi.append(h)
        alb.append(b.aux_lb)
        aub.append(b.aux_ub)
        off += b.n_aux
    return (np.vstack(G), np.concatenate(lo), np.concatenate(hi),
            np.concatenate(alb), np.concatenate(aub), np.concatenate(link))


def _slot_risks(p, lay, Z):
    """Worst-case CVaR at slots 1..K-1 for solution columns Z (nz, C); shape (C,)."""
    if p.dr is None:
        return np.full(Z.shape[1], -np.inf)
    worst = np.full(Z.shape[1], -np.inf)
    for k in range(1, lay.K):
        f = p.dr.forms[k]
        if f is None:
            continue
        vals = f.evaluate(Z[lay.x(k)].T)
        worst = np.maximum(worst, primal_evaluator(vals, p.dr.amb, p.dr.risk.beta))
    return worst


def _box_ok(Z, lo, hi):
    return np.all((Z >= lo[:, None] - FEAS_TOL) & (Z <= hi[:, None] + FEAS_TOL), axis=0)


# -- solve ------------------------------------------------------------------

def check_start(p: FiniteHorizonProblem, x) -> float:
    """Worst-case CVaR of the slot-0 form at the fixed start state (-inf without DR)."""
    if p.dr is None or p.dr.forms[0] is None:
        return -np.inf
    return float(primal_evaluator(p.dr.forms[0].evaluate(x)[None], p.dr.amb, p.dr.risk.beta)[0])


def solve_fhocp(p: FiniteHorizonProblem, x, settings: AdmmSettings | None = None,
                method: str = "cuts") -> OcpSolution:
    """Minimise stage costs plus terminal value over all terminal candidates.

    Quadratic costs are solved either with exact active-set solves and DR
    cutting planes (``"cuts"``) or with ADMM over the dual-block rows
    (``"dual-block"``).  Norm costs always use the dual-block LP.
    """
    if method not in ("cuts", "dual-block"):
        raise ValueError(f"unknown OCP method {method!r}")
    x0 = np.asarray(x, dtype=float).reshape(-1)
    if x0.shape[0] != p.dynamics.n_x:
        raise ValueError("state dimension mismatch")
    if np.any(x0 < p.x_lo - 1e-9) or np.any(x0 > p.x_hi + 1e-9):
        raise OcpInfeasible("start state outside the state box", {"x": x0.tolist()})
    if p.dr is not None and check_start(p, x0) > p.dr.risk.delta + 1e-7:
        raise OcpInfeasible("start state violates the DR constraint",
                            {"x": x0.tolist(), "risk": check_start(p, x0)})
    if p.cost.is_quadratic:
        return _solve_quadratic(p, x0, settings or AdmmSettings(), method)
    return _solve_norm(p, x0)


def _finish(p, lay, x0, z, c, n_solved, diag):
    X = [x0] + [z[lay.x(k)] for k in range(1, lay.K)] + [p.terminal_states[c]]
    U = [z[lay.u(k)] for k in range(lay.K)]
    X, U = np.array(X), np.array(U)
    obj = sum(p.cost(X[k], U[k]) for k in range(lay.K)) + float(p.terminal_values[c])
    return OcpSolution(X, U, float(obj), int(c), n_solved, diag)


class _Incumbent:
    def __init__(self):
        self.value, self.index, self.z = np.inf, -1, None

    def offer(self, value, c, z):
        if value < self.value - 1e-9 or (abs(value - self.value) <= 1e-9 and c < self.index):
            self.value, self.index, self.z = value, c, z

    def done(self, lb) -> bool:
        """No later candidate (sorted by lower bound) can improve the incumbent."""
        return lb > self.value + 1e-9

    def skip(self, lb, c) -> bool:
        return self.done(lb) or (lb >= self.value - 1e-9 and c > self.index)


def _solve_quadratic(p, x0, settings, method):
    nx, nu, K = p.dynamics.n_x, p.dynamics.n_u, p.K
    lay = _Layout(K, nx, nu)
    Tst, Tval = p.terminal_states, p.terminal_values
    C = Tst.shape[0]
    E, b0 = _dynamics_rows(p, lay, x0)
    P, q, const = _quadratic_terms(p, lay, x0)
    lo, hi = _bounds(p, lay)
    RHS = _rhs(b0, nx, Tst)

    # equality-only relaxation: exact lower bound per candidate
    m = E.shape[0]
    KKT = np.block([[P, E.T], [E, np.zeros((m, m))]])
    Zrel = None
    LB = const + Tval.copy()
    try:
        lu = sla.lu_factor(KKT, check_finite=False)
        if np.abs(np.diag(lu[0])).min() > 1e-12 * max(1.0, np.abs(np.diag(lu[0])).max()):
            sol = sla.lu_solve(lu, np.vstack([np.repeat(-q[:, None], C, axis=1), RHS]))
            Zrel = sol[:lay.nz]
            LB = 0.5 * np.einsum("ic,ij,jc->c", Zrel, P, Zrel) + q @ Zrel + const + Tval
    except (np.linalg.LinAlgError, ValueError):
        Zrel = None
    # reachability is exact for the relaxation: an unreachable candidate has a
    # residual in the solved equalities
    if Zrel is not None:
        reach = np.abs(E @ Zrel - RHS).max(axis=0) <= 1e-8 * (1 + np.abs(RHS).max(axis=0))
        LB = np.where(reach, LB, np.inf)

    rel_ok = np.zeros(C, dtype=bool)
    if Zrel is not None:
        rel_ok = _box_ok(Zrel, lo, hi)
        if p.dr is not None and rel_ok.any():
            idx = np.flatnonzero(rel_ok)
            rel_ok[idx] = _slot_risks(p, lay, Zrel[:, idx]) <= p.dr.risk.delta + FEAS_TOL

    order = sorted(range(C), key=lambda c: (LB[c], c))
    inc = _Incumbent()
    failed: dict[int, str] = {}
    if method == "cuts":
        n_solved = _run_cuts(p, lay, x0, order, LB, rel_ok, Zrel, inc, failed)
    else:
        n_solved = _run_dual_blocks(p, lay, P, q, E, lo, hi, RHS, const, order, LB, rel_ok,
                                    Zrel, inc, failed, settings)
    if inc.index < 0:
        raise OcpInfeasible("no terminal candidate admits a feasible plan",
                            {"x": x0.tolist(), "failed": failed, "n_candidates": C})
    return _finish(p, lay, x0, inc.z, inc.index, n_solved, {"failed": failed})


class _Condensed:
    """States eliminated: ``x_k = free[k] + Gam[k] @ u`` with ``u`` stacked over the horizon."""

    def __init__(self, p, x0):
        A, B = p.dynamics.A, p.dynamics.B
        nx, nu, K = p.dynamics.n_x, p.dynamics.n_u, p.K
        Gam = np.zeros((K + 1, nx, nu * K))
        free = np.zeros((K + 1, nx))
        free[0] = x0
        for k in range(1, K + 1):
            Gam[k] = A @ Gam[k - 1]
            Gam[k][:, (k - 1) * nu:k * nu] = B
            free[k] = A @ free[k - 1]
        Q, R, xF = p.cost.Q, p.cost.R, p.cost.x_F
        P = 2 * np.kron(np.eye(K), R)
        q = np.zeros(nu * K)
        const = p.cost.state_cost(x0)
        rows, rhs = [], []
        for k in range(1, K):
            e = free[k] - xF
            P += 2 * Gam[k].T @ Q @ Gam[k]
            q += 2 * Gam[k].T @ Q @ e
            const += float(e @ Q @ e)
            up, dn = np.isfinite(p.x_hi), np.isfinite(p.x_lo)
            rows += [Gam[k][up], -Gam[k][dn]]
            rhs += [p.x_hi[up] - free[k][up], free[k][dn] - p.x_lo[dn]]
        I = np.eye(nu * K)
        ulo, uhi = np.tile(p.u_lo, K), np.tile(p.u_hi, K)
        rows += [I[np.isfinite(uhi)], -I[np.isfinite(ulo)]]
        rhs += [uhi[np.isfinite(uhi)], -ulo[np.isfinite(ulo)]]
        self.Gam, self.free, self.P, self.q, self.const = Gam, free, P, q, const
        self.G = np.vstack(rows)
        self.h = np.concatenate(rhs)

    def states(self, u):
        return self.free + self.Gam @ u


def _run_cuts(p, lay, x0, order, LB, rel_ok, Zrel, inc, failed):
    """Exact candidate solves: active-set QP plus cutting planes for the DR constraint.

    Worst-case CVaR of the per-atom maxima of affine pieces is polyhedral in
    the state, and each cut is one of its finitely many supporting pieces, so
    the loop ends with a plan that meets the DR constraint.  Cuts only depend
    on the start state, so they are shared by all candidates.
    """
    cond = None
    cut_rows: list[np.ndarray] = []
    cut_rhs: list[float] = []
    n_solved = 0
    K = p.K
    for c in order:
        if not np.isfinite(LB[c]):
            failed[c] = "unreachable"
            continue
        if inc.done(LB[c]):
            break
        if inc.skip(LB[c], c):
            continue
        if rel_ok[c]:
            inc.offer(float(LB[c]), c, Zrel[:, c])
            continue
        if cond is None:
            cond = _Condensed(p, x0)
        beq = p.terminal_states[c] - cond.free[K]
        n_solved += 1
        for _ in range(MAX_CUT_ROUNDS):
            G = np.vstack([cond.G] + cut_rows) if cut_rows else cond.G
            h = np.concatenate([cond.h, cut_rhs]) if cut_rows else cond.h
            r = solve_qp_dense(cond.P, cond.q, cond.Gam[K], beq, G, h,
                               constant=cond.const + p.terminal_values[c])
            if not r.ok:
                failed[c] = "infeasible" if r.kind is Status.INFEASIBLE else r.kind.value
                break
            if inc.skip(r.objective, c):
                failed[c] = "dominated"
                break
            X = cond.states(r.x)
            added = 0
            if p.dr is not None:
                for k in range(1, K):
                    f = p.dr.forms[k]
                    if f is None:
                        continue
                    alpha, c0, val = risk_cut(f, X[k], p.dr.amb, p.dr.risk.beta)
                    if val > p.dr.risk.delta + DR_RETRY_SLACK:
                        cut_rows.append((alpha @ cond.Gam[k])[None])
                        cut_rhs.append(p.dr.risk.delta - c0 - float(alpha @ cond.free[k]))
                        added += 1
            if not added:
                inc.offer(r.objective, c, np.concatenate([X[1:K].reshape(-1), r.x]))
                break
        else:
            failed[c] = "cut-limit"
    return n_solved


def _run_dual_blocks(p, lay, P, q, E, lo, hi, RHS, const, order, LB, rel_ok, Zrel, inc,
                     failed, settings):
    """Batched ADMM over the full dual-block formulation."""
    Tval = p.terminal_values
    n_solved = 0
    A_box = np.vstack([E, np.eye(lay.nz)])
    dr = _dr_blocks(p, lay)
    pos = 0
    while pos < len(order):
        batch = []
        while pos < len(order) and len(batch) < BATCH:
            c = order[pos]
            pos += 1
            if not np.isfinite(LB[c]):
                failed[c] = "unreachable"
                continue
            if inc.done(LB[c]):
                pos = len(order)
                break
            if inc.skip(LB[c], c):
                continue
            if rel_ok[c]:
                inc.offer(float(LB[c]), c, Zrel[:, c])
            else:
                batch.append(c)
        if not batch:
            continue
        Lb = np.vstack([RHS[:, batch], np.repeat(lo[:, None], len(batch), axis=1)])
        Ub = np.vstack([RHS[:, batch], np.repeat(hi[:, None], len(batch), axis=1)])
        res = solve_qp_batch(P, q, A_box, Lb, Ub, settings, constant=const + Tval[batch])
        n_solved += len(batch)
        need_dr = []
        for c, r in zip(batch, res):
            if r.kind is Status.INFEASIBLE:
                failed[c] = "box-infeasible"
            elif r.kind is not Status.OPTIMAL:
                failed[c] = f"box:{r.kind.value}"
                need_dr.append(c)
            elif dr is not None and _slot_risks(p, lay, r.x[:, None])[0] > p.dr.risk.delta + FEAS_TOL:
                need_dr.append(c)
            else:
                inc.offer(r.objective, c, r.x)
        need_dr = [c for c in need_dr if not inc.skip(LB[c], c)]
        if need_dr and dr is not None:
            for c, r in _solve_dr(p, lay, P, q, E, lo, hi, dr, RHS, const, Tval, need_dr, settings):
                n_solved += 1
                if r is None:
                    failed.setdefault(c, "dr-infeasible")
                else:
                    failed.pop(c, None)
                    inc.offer(r.objective, c, r.x[:lay.nz])
    return n_solved


def _solve_dr(p, lay, P, q, E, lo, hi, dr, RHS, const, Tval, cands, settings):
    G, glo, ghi, alb, aub, link = dr
    n_aux = alb.shape[0]
    n = lay.nz + n_aux
    Pf = np.zeros((n, n))
    Pf[:lay.nz, :lay.nz] = P
    qf = np.concatenate([q, np.zeros(n_aux)])
    Ef = np.hstack([E, np.zeros((E.shape[0], n_aux))])
    vlo = np.concatenate([lo, alb])
    vhi = np.concatenate([hi, aub])
    bounded = np.flatnonzero(np.isfinite(vlo) | np.isfinite(vhi))
    A = np.vstack([Ef, G, np.eye(n)[bounded]])
    out = []
    pending = list(cands)
    for slack in (0.0, DR_RETRY_SLACK):
        if not pending:
            break
        # the retry loosens only the linking rows (dual objective <= delta)
        h = np.where(link, ghi + slack, ghi)
        L = np.vstack([RHS[:, pending], np.repeat(glo[:, None], len(pending), axis=1),
                       np.repeat(vlo[bounded][:, None], len(pending), axis=1)])
        U = np.vstack([RHS[:, pending], np.repeat(h[:, None], len(pending), axis=1),
                       np.repeat(vhi[bounded][:, None], len(pending), axis=1)])
        res = solve_qp_batch(Pf, qf, A, L, U, settings, constant=const + Tval[pending])
        retry = []
        for c, r in zip(pending, res):
            if r.kind is Status.OPTIMAL:
                out.append((c, r))
            else:
                log.debug("candidate %d: DR solve ended with %s (slack %g)", c, r.kind.value, slack)
                retry.append(c)
        pending = retry
    out.extend((c, None) for c in pending)
    return out


def _solve_norm(p, x0):
    """Norm stage cost: one LP per candidate with epigraph variables."""
    nx, nu, K = p.dynamics.n_x, p.dynamics.n_u, p.K
    lay = _Layout(K, nx, nu)
    Tst, Tval = p.terminal_states, p.terminal_values
    E, b0 = _dynamics_rows(p, lay, x0)
    lo, hi = _bounds(p, lay)
    RHS = _rhs(b0, nx, Tst)
    dr = _dr_blocks(p, lay)
    n_aux = 0 if dr is None else dr[3].shape[0]
    inf_norm = p.cost.norm_ord == np.inf
    wx = 1 if inf_norm else nx
    wu = 1 if inf_norm else nu
    n_tx, n_tu = wx * (K - 1), wu * K
    off_tx = lay.nz + n_aux
    off_tu = off_tx + n_tx
    n = off_tu + n_tu

    rows, rlo, rhi = [], [], []

    def epi(var_cols, t_cols, center):
        # t >= +/-(v - center), coordinatewise or against a single scalar
        for sgn in (1.0, -1.0):
            R = np.zeros((len(var_cols), n))
            R[np.arange(len(var_cols)), var_cols] = -sgn
            R[np.arange(len(var_cols)), t_cols] = 1.0
            rows.append(R)
            rlo.append(-sgn * center)
            rhi.append(np.full(len(var_cols), np.inf))

    for k in range(1, K):
        t = off_tx + (k - 1) * wx + (np.zeros(nx, dtype=int) if inf_norm else np.arange(nx))
        epi(lay.x(k), t, p.cost.x_F)
    for k in range(K):
        t = off_tu + k * wu + (np.zeros(nu, dtype=int) if inf_norm else np.arange(nu))
        epi(lay.u(k), t, np.zeros(nu))
    c = np.zeros(n)
    c[off_tx:off_tu] = p.cost.c_x
    c[off_tu:] = p.cost.c_u
    const = p.cost.state_cost(x0)
    Eb = np.hstack([E, np.zeros((E.shape[0], n - lay.nz))])
    fixed_rows = [np.vstack(rows)] if rows else []
    fixed_lo = np.concatenate(rlo) if rlo else np.zeros(0)
    fixed_hi = np.concatenate(rhi) if rhi else np.zeros(0)
    if dr is not None:
        G = np.hstack([dr[0], np.zeros((dr[0].shape[0], n - lay.nz - n_aux))])
        fixed_rows.append(G)
        fixed_lo = np.concatenate([fixed_lo, dr[1]])
        fixed_hi = np.concatenate([fixed_hi, dr[2]])
    vlb = np.concatenate([lo, dr[3] if dr is not None else [], np.zeros(n_tx + n_tu)])
    vub = np.concatenate([hi, dr[4] if dr is not None else [], np.full(n_tx + n_tu, np.inf)])
    A = np.vstack([Eb] + fixed_rows)

    inc = _Incumbent()
    failed = {}
    order = sorted(range(Tst.shape[0]), key=lambda i: (Tval[i], i))
    n_solved = 0
    for i in order:
        if inc.done(const + Tval[i]):
            break
        if inc.skip(const + Tval[i], i):
            continue
        lp = LinearProgram(c, A, np.concatenate([RHS[:, i], fixed_lo]),
                           np.concatenate([RHS[:, i], fixed_hi]), vlb, vub)
        r = solve_lp(lp)
        n_solved += 1
        if r.ok:
            inc.offer(r.objective + const + Tval[i], i, r.x[:lay.nz])
        else:
            failed[i] = r.kind.value
    if inc.index < 0:
        raise OcpInfeasible("no terminal candidate admits a feasible plan",
                            {"x": x0.tolist(), "failed": failed})
    return _finish(p, lay, x0, inc.z, inc.index, n_solved, {"failed": failed})


# -- existence of the local cost bound --------------------------------------

@dataclass(frozen=True)
class QConditions:
    holds_a: bool
    holds_b: bool

    @property
    def implies_Q(self) -> bool:
        return self.holds_a or self.holds_b


def check_q_conditions(C1, C2, C3, a1, a2, a3, diam_U, tol: float = 1e-12) -> QConditions:
    """Arithmetic sufficient conditions for a local bound on the optimal cost.

    (a) ``a1*a3 == a2`` and ``C3*C1**a3 >= C2``;
    (b) ``a1*a3 < a2`` and ``diam_U <= (C3*C1**a3 / C2) ** (1 / (a2 - a1*a3))``.
    """
    vals = [C1, C2, C3, a1, a2, a3, diam_U]
    if any(v < 0 for v in vals):
        raise ValueError("constants must be nonnegative")
    lead = C3 * C1 ** a3
    holds_a = abs(a1 * a3 - a2) <= tol and lead >= C2 - tol
    holds_b = False
    if a1 * a3 < a2 - tol:
        bound = math.inf if C2 == 0 else (lead / C2) ** (1.0 / (a2 - a1 * a3))
        holds_b = diam_U <= bound + tol
    return QConditions(bool(holds_a), bool(holds_b))
