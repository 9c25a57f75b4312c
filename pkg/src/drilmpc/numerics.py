"""Dense LP and convex QP solvers.

Both solvers work on the same constraint layout::

    l <= A z <= u,    lb <= z <= ub

with ``INF`` (any magnitude >= 1e30) standing for an absent bound.  The LP
solver is a bounded-variable revised simplex; the QP solver is an
operator-splitting (ADMM) method followed by an active-set polish step.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)

INF = 1e30


class SolverInputError(ValueError):
    """Raised for malformed problem data."""


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"


def _clean_bounds(v, n, default):
    if v is None:
        return np.full(n, default, dtype=float)
    v = np.array(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise SolverInputError(f"bound vector has length {v.shape[0]}, expected {n}")
    v = v.copy()
    v[v >= INF] = np.inf
    v[v <= -INF] = -np.inf
    return v


@dataclass(frozen=True)
class LinearProgram:
    """minimize ``c @ z`` subject to ``l <= A z <= u`` and ``lb <= z <= ub``."""

    c: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __init__(self, c, A=None, l=None, u=None, lb=None, ub=None):
        c = np.asarray(c, dtype=float).reshape(-1)
        n = c.shape[0]
        A = np.zeros((0, n)) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[1] != n:
            raise SolverInputError(f"A has {A.shape[1]} columns, objective has {n}")
        m = A.shape[0]
        l = _clean_bounds(l, m, -np.inf)
        u = _clean_bounds(u, m, np.inf)
        lb = _clean_bounds(lb, n, -np.inf)
        ub = _clean_bounds(ub, n, np.inf)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A))):
            raise SolverInputError("objective and constraint matrix must be finite")
        if np.any(l > u) or np.any(lb > ub):
            raise SolverInputError("lower bound exceeds upper bound")
        for name, val in (("c", c), ("A", A), ("l", l), ("u", u), ("lb", lb), ("ub", ub)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class QuadraticProgram:
    """minimize ``0.5 z'Pz + q'z + r`` subject to the LinearProgram constraint block."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    r: float = 0.0

    def __init__(self, P, q, A=None, l=None, u=None, lb=None, ub=None, r=0.0):
        q = np.asarray(q, dtype=float).reshape(-1)
        n = q.shape[0]
        P = np.atleast_2d(np.asarray(P, dtype=float))
        if P.shape != (n, n):
            raise SolverInputError(f"P has shape {P.shape}, expected {(n, n)}")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-10:
            raise SolverInputError("P is not symmetric")
        P = 0.5 * (P + P.T)
        if n and np.linalg.eigvalsh(P)[0] < -1e-8:
            raise SolverInputError("P is not positive semidefinite")
        lp = LinearProgram(q, A, l, u, lb, ub)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", float(r))
        P.setflags(write=False)
        for name in ("q", "A", "l", "u", "lb", "ub"):
            object.__setattr__(self, name, getattr(lp, "c" if name == "q" else name))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]


@dataclass
class SolveStatus:
    kind: Status
    objective: float
    x: np.ndarray
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    iterations: int = 0
    y: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.kind is Status.OPTIMAL


# ---------------------------------------------------------------------------
# Linear programming: bounded-variable revised simplex
# ---------------------------------------------------------------------------

_FEAS_TOL = 1e-9
_OPT_TOL = 1e-9
_PIVOT_TOL = 1e-11


class _Simplex:
    """Bounded revised simplex on ``M x = b`` with ``lo <= x <= hi``."""

    def __init__(self, M, b, lo, hi, basis, max_iter):
        self.M = M
        self.b = b
        self.lo = lo
        self.hi = hi
        self.basis = list(basis)
        self.max_iter = max_iter
        self.iterations = 0
        n = M.shape[1]
        # nonbasic resting value; free variables rest at 0
        self.x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
        self.is_basic = np.zeros(n, dtype=bool)
        self.is_basic[self.basis] = True
        self._refactor()

    def _refactor(self):
        self.lu = sla.lu_factor(self.M[:, self.basis])
        nb = ~self.is_basic
        rhs = self.b - self.M[:, nb] @ self.x[nb]
        self.x[self.basis] = sla.lu_solve(self.lu, rhs)

    def run(self, c):
        """Optimise ``c @ x`` from the current basis. Returns 'optimal', 'unbounded' or 'max_iter'."""
        degenerate_run = 0
        n = self.M.shape[1]
        while True:
            if self.iterations >= self.max_iter:
                return "max_iter"
            cb = c[self.basis]
            y = sla.lu_solve(self.lu, cb, trans=1)
            d = c - self.M.T @ y
            lo, hi, x = self.lo, self.hi, self.x
            can_up = (~self.is_basic) & (x < hi - _FEAS_TOL) & (d < -_OPT_TOL)
            can_down = (~self.is_basic) & (x > lo + _FEAS_TOL) & (d > _OPT_TOL)
            eligible = np.flatnonzero(can_up | can_down)
            if eligible.size == 0:
                return "optimal"
            if degenerate_run > 50:
                j = int(eligible[0])  # Bland's rule
            else:
                j = int(eligible[np.argmax(np.abs(d[eligible]))])
            direction = 1.0 if can_up[j] else -1.0
            alpha = sla.lu_solve(self.lu, self.M[:, j])
            dxb = -direction * alpha
            xb = x[self.basis]
            lob = lo[self.basis]
            hib = hi[self.basis]
            step = hi[j] - lo[j]
            leave = -1
            leave_to_upper = False
            with np.errstate(divide="ignore", invalid="ignore"):
                dec = dxb < -_PIVOT_TOL
                inc = dxb > _PIVOT_TOL
                r_dec = np.where(dec, (xb - lob) / -dxb, np.inf)
                r_inc = np.where(inc, (hib - xb) / dxb, np.inf)
            r = np.minimum(r_dec, r_inc)
            r = np.maximum(r, 0.0)
            if r.size:
                rmin = r.min()
                if rmin < step:
                    ties = np.flatnonzero(r <= rmin + 1e-12)
                    if degenerate_run > 50:
                        pick = min(ties, key=lambda i: self.basis[i])
                    else:
                        pick = int(ties[np.argmax(np.abs(dxb[ties]))])
                    leave = int(pick)
                    leave_to_upper = bool(inc[leave] and r_inc[leave] <= r_dec[leave])
                    step = rmin
            if not np.isfinite(step):
                return "unbounded"
            self.iterations += 1
            degenerate_run = degenerate_run + 1 if step <= 1e-12 else 0
            x[self.basis] = xb + step * dxb
            x[j] = x[j] + direction * step
            if leave < 0:
                # bound flip of the entering variable
                x[j] = hi[j] if direction > 0 else lo[j]
                continue
            out = self.basis[leave]
            x[out] = hib[leave] if leave_to_upper else lob[leave]
            self.basis[leave] = j
            self.is_basic[out] = False
            self.is_basic[j] = True
            if self.iterations % 50 == 0:
                self._refactor()
            else:
                self.lu = sla.lu_factor(self.M[:, self.basis])
            _ = n


def solve_lp(lp: LinearProgram, max_iter: int = 5000) -> SolveStatus:
    """Solve ``lp`` with a two-phase bounded revised simplex.

    The returned point satisfies all bounds and rows to within 1e-8 when the
    status is optimal.  Cycling is broken by switching to Bland's rule after a
    run of degenerate pivots.
    """
    if not isinstance(lp, LinearProgram):
        raise SolverInputError("solve_lp expects a LinearProgram")
    n, m = lp.n, lp.m
    # variables: z (n), s = A z (m), artificials (m)
    lo = np.concatenate([lp.lb, lp.l, np.zeros(m)])
    hi = np.concatenate([lp.ub, lp.u, np.full(m, np.inf)])
    z0 = np.where(np.isfinite(lp.lb), lp.lb, np.where(np.isfinite(lp.ub), lp.ub, 0.0))
    s0 = np.where(np.isfinite(lp.l), lp.l, np.where(np.isfinite(lp.u), lp.u, 0.0))
    resid = -(lp.A @ z0 - s0)  # artificial must absorb this
    sign = np.where(resid >= 0, 1.0, -1.0)
    M = np.hstack([lp.A, -np.eye(m), np.diag(sign)])
    b = np.zeros(m)
    basis = list(range(n + m, n + 2 * m))
    if m == 0:
        # only variable bounds: closed-form
        x = np.where(lp.c > 0, lp.lb, np.where(lp.c < 0, lp.ub, z0))
        if not np.all(np.isfinite(x)):
            return SolveStatus(Status.UNBOUNDED, -np.inf, z0, iterations=0)
        return SolveStatus(Status.OPTIMAL, float(lp.c @ x), x, 0.0, 0.0, 0)
    sx = _Simplex(M, b, lo, hi, basis, max_iter)
    c1 = np.concatenate([np.zeros(n + m), np.ones(m)])
    res = sx.run(c1)
    if res == "max_iter":
        return _lp_status(lp, sx, Status.MAX_ITER)
    infeas = float(sx.x[n + m:].sum())
    if infeas > 1e-8 * max(1.0, np.abs(lp.A).max(initial=0.0)):
        return _lp_status(lp, sx, Status.INFEASIBLE)
    # pin artificials at zero for phase two
    sx.hi[n + m:] = 0.0
    sx.x[n + m:] = np.minimum(sx.x[n + m:], 0.0)
    sx._refactor()
    c2 = np.concatenate([lp.c, np.zeros(2 * m)])
    res = sx.run(c2)
    if res == "unbounded":
        return _lp_status(lp, sx, Status.UNBOUNDED)
    if res == "max_iter":
        return _lp_status(lp, sx, Status.MAX_ITER)
    sx._refactor()
    return _lp_status(lp, sx, Status.OPTIMAL)


def _lp_status(lp, sx, kind):
    z = sx.x[: lp.n].copy()
    Az = lp.A @ z
    viol = np.concatenate([
        np.maximum(lp.l - Az, 0), np.maximum(Az - lp.u, 0),
        np.maximum(lp.lb - z, 0), np.maximum(z - lp.ub, 0),
    ])
    pres = float(np.nanmax(viol, initial=0.0))
    obj = float(lp.c @ z)
    if kind is Status.UNBOUNDED:
        obj = -np.inf
    elif kind is Status.INFEASIBLE:
        obj = np.inf
    return SolveStatus(kind, obj, z, pres, 0.0 if kind is Status.OPTIMAL else np.inf, sx.iterations)


# ---------------------------------------------------------------------------
# Quadratic programming: ADMM with polishing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmmSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    eps_infeas: float = 1e-7
    max_iter: int = 200_000
    check_every: int = 25
    adapt_every: int = 100
    polish: bool = True
    polish_tol: float = 1e-9


def _stack_constraints(qp: QuadraticProgram):
    """Fold variable bounds into the row block; returns (A, l, u)."""
    bounded = np.flatnonzero(np.isfinite(qp.lb) | np.isfinite(qp.ub))
    A = np.vstack([qp.A, np.eye(qp.n)[bounded]])
    l = np.concatenate([qp.l, qp.lb[bounded]])
    u = np.concatenate([qp.u, qp.ub[bounded]])
    return A, l, u


def solve_qp(qp: QuadraticProgram, settings: AdmmSettings | None = None) -> SolveStatus:
    """Solve a convex QP by ADMM followed by an active-set polish.

    When the status is optimal, the KKT residuals at the returned point are
    below ``max(eps_abs, polish_tol)``-scaled thresholds.
    """
    if not isinstance(qp, QuadraticProgram):
        raise SolverInputError("solve_qp expects a QuadraticProgram")
    A, l, u = _stack_constraints(qp)
    return solve_qp_batch(qp.P, qp.q, A, l[:, None], u[:, None], settings, constant=qp.r)[0]


def solve_qp_batch(P, q, A, L, U, settings: AdmmSettings | None = None,
                   constant: np.ndarray | float = 0.0) -> list[SolveStatus]:
    """Solve several QPs sharing ``P, q, A`` but with different row bounds.

    ``L`` and ``U`` have one column per problem.  Columns converge
    independently; a shared factorisation is reused across columns.
    """
    s = settings or AdmmSettings()
    P = np.asarray(P, dtype=float)
    A = np.asarray(A, dtype=float)
    q = np.asarray(q, dtype=float).reshape(-1)
    L = np.where(np.asarray(L, dtype=float) <= -INF, -np.inf, np.asarray(L, dtype=float))
    U = np.where(np.asarray(U, dtype=float) >= INF, np.inf, np.asarray(U, dtype=float))
    C = L.shape[1]
    const = np.broadcast_to(np.asarray(constant, dtype=float), (C,))
    solver = _Admm(P, q, A, L, U, s)
    out = solver.run()
    results = []
    for k in range(C):
        kind, x, y, pres, dres, it = out[k]
        obj = float(0.5 * x @ P @ x + q @ x + const[k]) if kind is Status.OPTIMAL else (
            np.inf if kind is Status.INFEASIBLE else -np.inf if kind is Status.UNBOUNDED else np.nan)
        results.append(SolveStatus(kind, obj, x, pres, dres, it, y))
    return results


class _Admm:
    def __init__(self, P, q, A, L, U, s: AdmmSettings):
        self.P, self.q, self.A, self.L, self.U, self.s = P, q, A, L, U, s
        n, m = q.shape[0], A.shape[0]
        C = L.shape[1]
        self.n, self.m, self.C = n, m, C
        # an all-equality row in every column gets the stiff penalty
        eq = np.all(np.abs(U - L) < 1e-12, axis=1)
        free = np.all(~np.isfinite(L) & ~np.isfinite(U), axis=1)
        self.eq_rows, self.free_rows = eq, free
        self.rho = s.rho
        self._set_rho(s.rho)
        self.X = np.zeros((n, C))
        self.Z = np.clip(np.zeros((m, C)), L, U)
        self.Y = np.zeros((m, C))

    def _set_rho(self, rho):
        self.rho = float(np.clip(rho, 1e-6, 1e6))
        rv = np.full(self.m, self.rho)
        rv[self.eq_rows] = 1e3 * self.rho
        rv[self.free_rows] = 1e-6
        self.rho_vec = rv
        K = self.P + self.s.sigma * np.eye(self.n) + self.A.T @ (rv[:, None] * self.A)
        self.chol = sla.cho_factor(K)

    def run(self):
        s = self.s
        P, q, A, L, U = self.P, self.q, self.A, self.L, self.U
        active = np.ones(self.C, dtype=bool)
        result = [None] * self.C
        it = 0
        q_col = q[:, None]
        X, Z, Y = self.X, self.Z, self.Y
        while active.any():
            it += 1
            idx = np.flatnonzero(active)
            Xa, Za, Ya = X[:, idx], Z[:, idx], Y[:, idx]
            rv = self.rho_vec[:, None]
            rhs = s.sigma * Xa - q_col + A.T @ (rv * Za - Ya)
            Xt = sla.cho_solve(self.chol, rhs)
            Zt = A @ Xt
            Xn = s.alpha * Xt + (1 - s.alpha) * Xa
            Zr = s.alpha * Zt + (1 - s.alpha) * Za
            Zn = np.clip(Zr + Ya / rv, L[:, idx], U[:, idx])
            Yn = Ya + rv * (Zr - Zn)
            dY = Yn - Ya
            dX = Xn - Xa
            X[:, idx], Z[:, idx], Y[:, idx] = Xn, Zn, Yn
            if it % s.check_every and it < s.max_iter:
                continue
            Ax = A @ Xn
            Px = P @ Xn
            ATy = A.T @ Yn
            r_p = np.abs(Ax - Zn).max(axis=0, initial=0.0)
            r_d = np.abs(Px + q_col + ATy).max(axis=0, initial=0.0)
            sc_p = np.maximum(np.abs(Ax).max(axis=0, initial=0.0), np.abs(Zn).max(axis=0, initial=0.0))
            sc_d = np.maximum.reduce([np.abs(Px).max(axis=0, initial=0.0),
                                      np.abs(ATy).max(axis=0, initial=0.0),
                                      np.full(len(idx), np.abs(q).max(initial=0.0))])
            for c_local, k in enumerate(idx):
                done = None
                conv = (r_p[c_local] <= s.eps_abs + s.eps_rel * sc_p[c_local]
                        and r_d[c_local] <= s.eps_abs + s.eps_rel * sc_d[c_local])
                loose = r_p[c_local] <= 1e-3 * (1 + sc_p[c_local]) and r_d[c_local] <= 1e-3 * (1 + sc_d[c_local])
                if s.polish and (conv or loose):
                    pol = self._polish(X[:, k], Z[:, k], Y[:, k], L[:, k], U[:, k])
                    if pol is not None:
                        done = (Status.OPTIMAL, pol[0], pol[1], pol[2], pol[3], it)
                if done is None and conv:
                    done = (Status.OPTIMAL, X[:, k].copy(), Y[:, k].copy(), r_p[c_local], r_d[c_local], it)
                if done is None:
                    if self._primal_infeasible(dY[:, c_local], L[:, k], U[:, k]):
                        done = (Status.INFEASIBLE, X[:, k].copy(), Y[:, k].copy(), r_p[c_local], r_d[c_local], it)
                    elif self._dual_infeasible(dX[:, c_local], L[:, k], U[:, k]):
                        done = (Status.UNBOUNDED, X[:, k].copy(), Y[:, k].copy(), r_p[c_local], r_d[c_local], it)
                    elif it >= s.max_iter:
                        done = (Status.MAX_ITER, X[:, k].copy(), Y[:, k].copy(), r_p[c_local], r_d[c_local], it)
                if done is not None:
                    result[k] = done
                    active[k] = False
            if it % s.adapt_every == 0 and active.any():
                idx2 = np.flatnonzero(active[idx])
                num = r_p[idx2] / np.maximum(sc_p[idx2], 1e-12)
                den = r_d[idx2] / np.maximum(sc_d[idx2], 1e-12)
                ratio = float(np.median(np.sqrt(np.maximum(num, 1e-30) / np.maximum(den, 1e-30))))
                if ratio > 5 or ratio < 0.2:
                    self._set_rho(self.rho * ratio)
        return result

    def _primal_infeasible(self, dy, l, u):
        norm = np.abs(dy).max(initial=0.0)
        if norm < 1e-12:
            return False
        eps = self.s.eps_infeas * norm
        if np.abs(self.A.T @ dy).max(initial=0.0) > eps:
            return False
        pos = np.maximum(dy, 0)
        neg = np.minimum(dy, 0)
        if np.any((pos > eps) & ~np.isfinite(u)) or np.any((neg < -eps) & ~np.isfinite(l)):
            return False
        val = np.sum(np.where(pos > 0, np.where(np.isfinite(u), u, 0) * pos, 0)) + \
            np.sum(np.where(neg < 0, np.where(np.isfinite(l), l, 0) * neg, 0))
        return val < -eps

    def _dual_infeasible(self, dx, l, u):
        norm = np.abs(dx).max(initial=0.0)
        if norm < 1e-12:
            return False
        eps = self.s.eps_infeas * norm
        if np.abs(self.P @ dx).max(initial=0.0) > eps or self.q @ dx > -eps:
            return False
        Adx = self.A @ dx
        ok_hi = np.isfinite(u) & (Adx > eps)
        ok_lo = np.isfinite(l) & (Adx < -eps)
        return not (ok_hi.any() or ok_lo.any())

    def _polish(self, x, z, y, l, u):
        """Guess the active set from (z, y) and solve the reduced KKT system exactly."""
        P, q, A = self.P, self.q, self.A
        n = self.n
        eq = np.abs(u - l) < 1e-12
        act_lo = eq | (np.isfinite(l) & (z - l < -y))
        act_hi = ~eq & np.isfinite(u) & (u - z < y)
        act_hi &= ~act_lo
        rows = np.flatnonzero(act_lo | act_hi)
        Ar = A[rows]
        br = np.where(act_lo[rows], l[rows], u[rows])
        k = len(rows)
        delta = 1e-10
        K = np.zeros((n + k, n + k))
        K[:n, :n] = P
        K[:n, n:] = Ar.T
        K[n:, :n] = Ar
        Kreg = K.copy()
        Kreg[np.arange(n), np.arange(n)] += delta
        Kreg[np.arange(n, n + k), np.arange(n, n + k)] -= delta
        rhs = np.concatenate([-q, br])
        try:
            fac = sla.lu_factor(Kreg, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            return None
        # refine from the ADMM iterate: when the reduced KKT matrix is singular
        # (zero curvature on a degenerate face) this stays near a point that
        # already satisfies the inactive rows
        sol = np.concatenate([x, y[rows]])
        for _ in range(10):
            step = sla.lu_solve(fac, rhs - K @ sol)
            sol = sol + step
            if np.abs(step).max(initial=0.0) <= 1e-14 * (1.0 + np.abs(sol).max(initial=0.0)):
                break
        if not np.all(np.isfinite(sol)):
            return None
        xp = sol[:n]
        yr = sol[n:] if k else np.zeros(0)
        yp = np.zeros(self.m)
        yp[rows] = yr
        tol = self.s.polish_tol
        Ax = A @ xp
        scale = 1.0 + max(np.abs(Ax).max(initial=0.0), np.abs(xp).max(initial=0.0))
        pres = max(np.max(l - Ax, initial=0.0), np.max(Ax - u, initial=0.0))
        if pres > tol * scale:
            return None
        # multiplier signs: y < 0 at lower-active, y > 0 at upper-active
        ysc = 1.0 + np.abs(yp).max(initial=0.0)
        lo_only = act_lo & ~eq
        if np.any(yp[lo_only] > tol * ysc) or np.any(yp[act_hi] < -tol * ysc):
            return None
        dres = np.abs(P @ xp + q + A.T @ yp).max(initial=0.0)
        if dres > tol * (1.0 + np.abs(q).max(initial=0.0) + ysc):
            return None
        return xp, yp, float(pres), float(dres)


# ---------------------------------------------------------------------------
# Strictly convex QP: dual active-set method (Goldfarb-Idnani)
# ---------------------------------------------------------------------------

def solve_qp_dense(P, q, A_eq=None, b_eq=None, G=None, h=None, constant: float = 0.0,
                   tol: float = 1e-10, max_iter: int | None = None) -> SolveStatus:
    """minimize ``0.5 z'Pz + q'z + constant`` s.t. ``A_eq z = b_eq``, ``G z <= h``.

    ``P`` must be positive definite.  The method starts at the equality
    constrained minimiser and adds violated inequalities one at a time while
    keeping dual feasibility, so it returns an exact vertex of the KKT system
    rather than an approximate iterate.  Meant for small dense problems.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float).reshape(-1)
    n = q.shape[0]
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    G = np.zeros((0, n)) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
    if P.shape != (n, n) or A_eq.shape[1:] != (n,) or G.shape[1:] != (n,):
        raise SolverInputError("inconsistent QP dimensions")
    if A_eq.shape[0] != b_eq.shape[0] or G.shape[0] != h.shape[0]:
        raise SolverInputError("constraint rows and right-hand sides differ in length")
    try:
        chol = sla.cho_factor(0.5 * (P + P.T), check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverInputError("P must be positive definite") from exc
    Pinv = sla.cho_solve(chol, np.eye(n), check_finite=False)

    def result(kind, z, it, y=None):
        obj = np.inf if z is None else float(0.5 * z @ P @ z + q @ z + constant)
        res = 0.0
        if z is not None:
            if A_eq.shape[0]:
                res = float(np.abs(A_eq @ z - b_eq).max())
            if G.shape[0]:
                res = max(res, float(np.maximum(G @ z - h, 0).max()))
        return SolveStatus(kind, obj, z, res, 0.0, it, y)

    # independent equality rows; dependent ones are checked for consistency at the end
    keep = np.arange(A_eq.shape[0])
    if A_eq.shape[0]:
        _, R, piv = sla.qr(A_eq.T, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > 1e-10 * max(1.0, d.max() if d.size else 1.0)))
        keep = np.sort(piv[:rank])
    Ae, be = A_eq[keep], b_eq[keep]

    norms = np.linalg.norm(G, axis=1)
    zero = norms <= 1e-14
    if np.any(zero & (h < -tol)):
        return result(Status.INFEASIBLE, None, 0)
    norms[zero] = 1.0
    Gn, hn = G / norms[:, None], h / norms
    live = np.flatnonzero(~zero)
    thresh = tol * (1.0 + np.abs(hn))

    me = Ae.shape[0]
    if me:
        S = Ae @ Pinv @ Ae.T
        mu = -np.linalg.solve(S, be + Ae @ Pinv @ q)
        z = -Pinv @ (q + Ae.T @ mu)
    else:
        mu = np.zeros(0)
        z = -Pinv @ q
    if A_eq.shape[0] and np.abs(A_eq @ z - b_eq).max() > 1e-8 * (1 + np.abs(b_eq).max()):
        return result(Status.INFEASIBLE, None, 0)

    active: list[int] = []
    lam = mu.copy()  # equality multipliers first, then one per active inequality
    limit = max_iter or 50 * (n + G.shape[0] + 10)
    it = 0
    while True:
        viol = np.full(G.shape[0], -np.inf)
        viol[live] = Gn[live] @ z - hn[live] - thresh[live]
        if active:
            viol[active] = -np.inf
        if not viol.size or viol.max() <= 0:
            y = np.zeros(A_eq.shape[0] + G.shape[0])
            y[keep] = lam[:me]
            for j, a in enumerate(active):
                y[A_eq.shape[0] + a] = lam[me + j] / norms[a]
            return result(Status.OPTIMAL, z, it, y)
        p = int(np.argmax(viol))
        n_p = Gn[p]
        u_p = 0.0
        while True:
            it += 1
            if it > limit:
                return result(Status.MAX_ITER, z, it)
            w = Pinv @ n_p
            if me + len(active):
                M = np.vstack([Ae, Gn[active]]) if active else Ae
                PM = Pinv @ M.T
                dlam = -np.linalg.solve(M @ PM, M @ w)
                d = -w - PM @ dlam
            else:
                dlam = np.zeros(0)
                d = -w
            curv = -float(n_p @ d)
            t2, block = np.inf, -1
            for j in range(len(active)):
                g = dlam[me + j]
                if g < -1e-14:
                    ratio = lam[me + j] / -g
                    if ratio < t2:
                        t2, block = ratio, j
            if curv <= 1e-12 * max(1.0, float(n_p @ w)):
                # n_p depends on the active rows: only a dual step is possible
                if block < 0:
                    return result(Status.INFEASIBLE, None, it)
                lam = lam + t2 * dlam
                u_p += t2
                lam = np.delete(lam, me + block)
                del active[block]
                continue
            t1 = (float(n_p @ z) - hn[p]) / curv
            t = min(t1, t2)
            z = z + t * d
            lam = lam + t * dlam
            u_p += t
            if t1 <= t2:
                active.append(p)
                lam = np.append(lam, u_p)
                break
            lam = np.delete(lam, me + block)
            del active[block]
