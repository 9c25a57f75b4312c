"""Dual reformulations of the worst-case CVaR constraint.

For a TV ball of radius ``theta`` around the empirical weights ``p``::

    sup_mu CVaR_beta = min 2*lam*theta + eta + nu + sum_l (g1_l - g2_l) p_l
        s.t. beta (g1_l - g2_l + nu) >= [g_l - eta]_+,  g1_l + g2_l = lam,
             lam, g1, g2 >= 0

For an order-1 Wasserstein ball::

    sup_mu CVaR_beta = min lam*theta + eta + sum_l s_l
        s.t. p_l ([g_i - eta]_+ - beta*lam*d_il) <= beta s_l  for all i, l,  lam >= 0

(the transport multiplier carries a factor ``beta`` so that the objective
matches the primal value for every ``beta`` in (0, 1]).  ``[.]_+`` is replaced
by epigraph variables ``e_l >= g_l - eta, e_l >= 0``; this is exact because
``e`` only ever appears on the smaller side of an inequality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .numerics import LinearProgram, solve_lp
from .risk import (AmbiguitySet, DiscreteDistribution, Metric, RiskSpec, worst_case_cvar,
                   worst_case_cvar_tv_oracle, worst_case_cvar_w1_oracle, worst_case_weights)


class ReformError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintAtomValues:
    """Per-atom constraint values as a max of affine pieces in the state.

    ``g(x, w_l) = max_m slopes[m, l] @ x + offsets[m, l]``.  A fixed-state
    evaluation is the special case with zero state dimension.
    """

    slopes: np.ndarray   # (M, L, n_x)
    offsets: np.ndarray  # (M, L)

    def __post_init__(self):
        s = np.asarray(self.slopes, dtype=float)
        o = np.asarray(self.offsets, dtype=float)
        if o.ndim == 1:
            o = o[None, :]
        if s.ndim == 2:
            s = s[None]
        if o.shape[0] == 0:
            raise ValueError("at least one affine piece is required")
        if s.shape[:2] != o.shape:
            raise ValueError(f"slopes {s.shape} do not match offsets {o.shape}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(o))):
            raise ValueError("affine pieces must be finite")
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "offsets", o)

    @classmethod
    def fixed(cls, values) -> "ConstraintAtomValues":
        v = np.asarray(values, dtype=float).reshape(1, -1)
        return cls(np.zeros(v.shape + (0,)), v)

    @classmethod
    def affine(cls, slopes, offsets) -> "ConstraintAtomValues":
        """Single affine piece ``slopes[l] @ x + offsets[l]`` per atom."""
        s = np.asarray(slopes, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        return cls(s[None], np.asarray(offsets, dtype=float)[None])

    @property
    def n_atoms(self) -> int:
        return self.offsets.shape[1]

    @property
    def n_state(self) -> int:
        return self.slopes.shape[2]

    @property
    def n_pieces(self) -> int:
        return self.offsets.shape[0]

    def evaluate(self, x=None) -> np.ndarray:
        """Values per atom at state ``x`` (shape ``(L,)``), or at a batch ``(B, n_x) -> (B, L)``."""
        if self.n_state == 0:
            return self.offsets.max(axis=0)
        x = np.asarray(x, dtype=float)
        vals = np.einsum("mln,...n->...ml", self.slopes, x) + self.offsets
        return vals.max(axis=-2)


@dataclass(frozen=True)
class DualBlock:
    """Linear rows certifying ``sup_mu CVaR <= delta`` for a state in the given columns.

    Rows read ``lo <= A_state @ x + A_aux @ aux <= hi``; the dual objective is
    ``objective @ aux`` and the linking row bounds it by ``delta``.
    """

    metric: Metric
    aux_names: tuple[str, ...]
    aux_lb: np.ndarray
    aux_ub: np.ndarray
    A_state: np.ndarray
    A_aux: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    objective: np.ndarray
    delta: float
    state_var_indices: tuple[int, ...] = field(default=())

    @property
    def n_aux(self) -> int:
        return len(self.aux_names)

    def rows(self, with_link: bool = True):
        """(A_state, A_aux, lo, hi) including the linking row when requested."""
        if not with_link:
            return self.A_state, self.A_aux, self.lo, self.hi
        A_s = np.vstack([self.A_state, np.zeros((1, self.A_state.shape[1]))])
        A_a = np.vstack([self.A_aux, self.objective[None]])
        return A_s, A_a, np.append(self.lo, -np.inf), np.append(self.hi, self.delta)

    def embed(self, n_vars: int, aux_offset: int, with_link: bool = True):
        """Rows over a global variable vector; aux occupies ``aux_offset:aux_offset+n_aux``."""
        A_s, A_a, lo, hi = self.rows(with_link)
        G = np.zeros((A_s.shape[0], n_vars))
        if self.state_var_indices:
            G[:, list(self.state_var_indices)] = A_s
        G[:, aux_offset:aux_offset + self.n_aux] = A_a
        return G, lo, hi


def emit_dual_block(g_forms: ConstraintAtomValues, amb: AmbiguitySet, risk: RiskSpec,
                    state_var_indices: Sequence[int] | None = None) -> DualBlock:
    """Build the dual constraint block for the worst-case CVaR of ``g_forms``."""
    if g_forms.n_pieces == 0:
        raise ValueError("constraint forms need at least one affine piece")
    L = amb.reference.size
    if g_forms.n_atoms != L:
        raise ValueError(f"forms have {g_forms.n_atoms} atoms, ambiguity set has {L}")
    idx = tuple(state_var_indices) if state_var_indices is not None else tuple(range(g_forms.n_state))
    if len(idx) != g_forms.n_state:
        raise ValueError("state_var_indices length does not match the state dimension")
    if amb.metric is Metric.TV:
        return _tv_block(g_forms, amb, risk, idx)
    return _w1_block(g_forms, amb, risk, idx)


def _epigraph_rows(g_forms, n_aux, eta_col, e_cols):
    """e_l + eta - slopes[m, l] @ x >= offsets[m, l] for every piece m."""
    M, L, nx = g_forms.slopes.shape
    A_s = -g_forms.slopes.reshape(M * L, nx)
    A_a = np.zeros((M * L, n_aux))
    A_a[:, eta_col] = 1.0
    A_a[np.arange(M * L), np.tile(e_cols, M)] = 1.0
    lo = g_forms.offsets.reshape(-1)
    return A_s, A_a, lo, np.full(M * L, np.inf)


def _tv_block(g_forms, amb, risk, idx):
    L = amb.reference.size
    p = amb.reference.weights
    beta = risk.beta
    nx = g_forms.n_state
    names = ["eta", "nu", "lam"] + [f"g1_{l}" for l in range(L)] + \
        [f"g2_{l}" for l in range(L)] + [f"e_{l}" for l in range(L)]
    n_aux = len(names)
    ETA, NU, LAM = 0, 1, 2
    g1 = 3 + np.arange(L)
    g2 = 3 + L + np.arange(L)
    e = 3 + 2 * L + np.arange(L)
    lb = np.full(n_aux, -np.inf)
    lb[LAM] = 0.0
    lb[g1] = 0.0
    lb[g2] = 0.0
    lb[e] = 0.0
    ub = np.full(n_aux, np.inf)

    # beta (g1 - g2 + nu) - e >= 0
    R1 = np.zeros((L, n_aux))
    R1[np.arange(L), g1] = beta
    R1[np.arange(L), g2] = -beta
    R1[:, NU] = beta
    R1[np.arange(L), e] = -1.0
    # g1 + g2 - lam = 0
    R2 = np.zeros((L, n_aux))
    R2[np.arange(L), g1] = 1.0
    R2[np.arange(L), g2] = 1.0
    R2[:, LAM] = -1.0
    E_s, E_a, E_lo, E_hi = _epigraph_rows(g_forms, n_aux, ETA, e)

    A_aux = np.vstack([R1, R2, E_a])
    A_state = np.vstack([np.zeros((2 * L, nx)), E_s])
    lo = np.concatenate([np.zeros(L), np.zeros(L), E_lo])
    hi = np.concatenate([np.full(L, np.inf), np.zeros(L), E_hi])
    obj = np.zeros(n_aux)
    obj[LAM] = 2.0 * amb.radius
    obj[ETA] = 1.0
    obj[NU] = 1.0
    obj[g1] = p
    obj[g2] = -p
    return DualBlock(Metric.TV, tuple(names), lb, ub, A_state, A_aux, lo, hi, obj,
                     float(risk.delta), idx)


def _w1_block(g_forms, amb, risk, idx):
    L = amb.reference.size
    p = amb.reference.weights
    d = amb.reference.cost_matrix()
    beta = risk.beta
    nx = g_forms.n_state
    names = ["eta", "lam"] + [f"s_{l}" for l in range(L)] + [f"e_{l}" for l in range(L)]
    n_aux = len(names)
    ETA, LAM = 0, 1
    s = 2 + np.arange(L)
    e = 2 + L + np.arange(L)
    lb = np.full(n_aux, -np.inf)
    lb[LAM] = 0.0
    lb[e] = 0.0
    ub = np.full(n_aux, np.inf)

    # p_l e_i - p_l beta d_il lam - beta s_l <= 0, rows ordered (i, l)
    ii, ll = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    ii, ll = ii.ravel(), ll.ravel()
    R = np.zeros((L * L, n_aux))
    R[np.arange(L * L), e[ii]] = p[ll]
    R[:, LAM] = -p[ll] * beta * d[ii, ll]
    R[np.arange(L * L), s[ll]] += -beta
    E_s, E_a, E_lo, E_hi = _epigraph_rows(g_forms, n_aux, ETA, e)

    A_aux = np.vstack([R, E_a])
    A_state = np.vstack([np.zeros((L * L, nx)), E_s])
    lo = np.concatenate([np.full(L * L, -np.inf), E_lo])
    hi = np.concatenate([np.zeros(L * L), E_hi])
    obj = np.zeros(n_aux)
    obj[LAM] = amb.radius
    obj[ETA] = 1.0
    obj[s] = 1.0
    return DualBlock(Metric.WASSERSTEIN, tuple(names), lb, ub, A_state, A_aux, lo, hi, obj,
                     float(risk.delta), idx)


def eval_worst_case_cvar_dual(values, amb: AmbiguitySet, beta: float) -> float:
    """Worst-case CVaR of fixed per-atom values, by solving the dual LP."""
    forms = values if isinstance(values, ConstraintAtomValues) else ConstraintAtomValues.fixed(values)
    if forms.n_state != 0:
        raise ValueError("eval_worst_case_cvar_dual needs fixed values, not state-dependent forms")
    block = emit_dual_block(forms, amb, RiskSpec(beta, 0.0))
    _, A_a, lo, hi = block.rows(with_link=False)
    res = solve_lp(LinearProgram(block.objective, A_a, lo, hi, block.aux_lb, block.aux_ub))
    if res.kind.value == "max_iter":
        raise ReformError("dual LP hit the iteration cap")
    if not res.ok:
        raise ReformError(f"dual LP ended with status {res.kind.value}")
    return res.objective


def random_instance(rng: np.random.Generator, metric: Metric | str):
    """Random ``(values, ambiguity set, beta)`` with at most nine atoms.

    Atoms are distinct points of a grid on [-1, 1]; the reference is either a
    Dirichlet draw or an empirical distribution of a few samples, so it can
    leave atoms empty.  The radius spans [0, 1] for TV and [0, diameter] for
    the Wasserstein ball.
    """
    metric = Metric(metric)
    L = int(rng.integers(1, 10))
    atoms = np.sort(rng.choice(np.linspace(-1.0, 1.0, 41), size=L, replace=False))
    if rng.random() < 0.5:
        ref = DiscreteDistribution.empirical(atoms, rng.integers(0, L, size=int(rng.integers(1, 8))))
    else:
        ref = DiscreteDistribution(atoms, rng.dirichlet(np.ones(L)))
    top = 1.0 if metric is Metric.TV else float(atoms[-1] - atoms[0])
    amb = AmbiguitySet(metric, float(rng.uniform(0.0, top)), ref)
    beta = float(rng.choice([0.1, 0.2, 0.5, 1.0]))
    return rng.normal(size=L), amb, beta


def reformulation_errors(n_instances: int = 200, seed: int = 0) -> dict[str, float]:
    """Largest ``|dual LP - brute-force oracle|`` per metric over random instances."""
    rng = np.random.default_rng(seed)
    oracles = {Metric.TV: worst_case_cvar_tv_oracle, Metric.WASSERSTEIN: worst_case_cvar_w1_oracle}
    out = {}
    for metric, oracle in oracles.items():
        worst = 0.0
        for _ in range(n_instances):
            v, amb, beta = random_instance(rng, metric)
            worst = max(worst, abs(eval_worst_case_cvar_dual(v, amb, beta) - oracle(v, amb, beta)))
        out[metric.value] = worst
    return out


# -- evaluators: (B, L) value matrix -> (B,) worst-case CVaR ------------------

Evaluator = Callable[[np.ndarray, AmbiguitySet, float], np.ndarray]


def dual_evaluator(values, amb: AmbiguitySet, beta: float) -> np.ndarray:
    V = np.atleast_2d(np.asarray(values, dtype=float))
    return np.array([eval_worst_case_cvar_dual(v, amb, beta) for v in V])


def primal_evaluator(values, amb: AmbiguitySet, beta: float) -> np.ndarray:
    """Closed-form primal evaluation; agrees with :func:`dual_evaluator` to round-off."""
    return worst_case_cvar(values, amb, beta)


# -- constraint models -------------------------------------------------------

def risk_cut(g_forms: ConstraintAtomValues, x, amb: AmbiguitySet, beta: float):
    """Affine minorant ``alpha @ x + c`` of the worst-case CVaR, tight at ``x``.

    Returns ``(alpha, c, value)``.  The minorant picks the active piece per
    atom and the worst-case tail weights at ``x``, so ``alpha @ y + c <= delta``
    is implied by the DR constraint at every ``y``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    pieces = np.einsum("mln,n->ml", g_forms.slopes, x) + g_forms.offsets
    top = pieces.argmax(axis=0)
    atoms = np.arange(g_forms.n_atoms)
    vals = pieces[top, atoms]
    w = worst_case_weights(vals, amb, beta)
    alpha = w @ g_forms.slopes[top, atoms]
    c = float(w @ g_forms.offsets[top, atoms])
    return alpha, c, float(w @ vals)


class ConstraintModel(Protocol):
    """A constraint function ``g`` with one or more convex (max-affine) upper models.

    A fixed state is declared safe when at least one model's worst-case CVaR
    is within the tolerance ``delta``.
    """

    def options(self) -> Sequence[ConstraintAtomValues]: ...

    def exact_values(self, x) -> np.ndarray: ...


@dataclass(frozen=True)
class AffineConstraint:
    """``g`` that is already a max of affine pieces (a single model)."""

    forms: ConstraintAtomValues

    def options(self):
        return (self.forms,)

    def exact_values(self, x):
        return self.forms.evaluate(x)


def constant_constraint(value: float, n_atoms: int, n_state: int) -> AffineConstraint:
    """``g(x, w) = value`` everywhere."""
    return AffineConstraint(ConstraintAtomValues.affine(np.zeros((n_atoms, n_state)),
                                                        np.full(n_atoms, float(value))))


def option_risks(model, states, amb: AmbiguitySet, beta: float,
                 evaluator: Evaluator = primal_evaluator) -> np.ndarray:
    """Worst-case CVaR for every (state, option) pair; shape ``(n_states, n_options)``."""
    X = np.atleast_2d(np.asarray(states, dtype=float))
    opts = model.options()
    vals = np.stack([o.evaluate(X) for o in opts], axis=1)  # (S, O, L)
    S, O, L = vals.shape
    return evaluator(vals.reshape(S * O, L), amb, beta).reshape(S, O)


def state_risk(model, states, amb: AmbiguitySet, beta: float,
               evaluator: Evaluator = primal_evaluator) -> np.ndarray:
    """Smallest worst-case CVaR over the model's options, per state."""
    return option_risks(model, states, amb, beta, evaluator).min(axis=1)


def best_option(model, state, amb: AmbiguitySet, beta: float,
                evaluator: Evaluator = primal_evaluator) -> tuple[int, float]:
    r = option_risks(model, state, amb, beta, evaluator)[0]
    k = int(np.argmin(r))
    return k, float(r[k])
