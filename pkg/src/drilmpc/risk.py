"""Finite-support distributions, CVaR/VaR and worst-case CVaR oracles.

The oracles in this module work on the primal side (optimising over
distributions) and serve as ground truth for the dual reformulations in
:mod:`drilmpc.reform`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import LinearProgram, solve_lp


class RiskInputError(ValueError):
    pass


class Metric(str, enum.Enum):
    TV = "tv"
    WASSERSTEIN = "wasserstein"


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector ``weights`` over distinct ``atoms`` (shape ``(L, n_w)``)."""

    atoms: np.ndarray
    weights: np.ndarray

    def __init__(self, atoms, weights):
        atoms = np.asarray(atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if atoms.shape[0] != weights.shape[0]:
            raise RiskInputError("atoms and weights differ in length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise RiskInputError("weights must be a probability vector")
        L = atoms.shape[0]
        if L > 1:
            gaps = np.linalg.norm(atoms[:, None, :] - atoms[None, :, :], axis=-1)
            if np.any(gaps[np.triu_indices(L, 1)] == 0):
                raise RiskInputError("atoms must be pairwise distinct")
        atoms.setflags(write=False)
        weights = weights.copy()
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def empirical(cls, atoms, sample_indices: Sequence[int]) -> "DiscreteDistribution":
        """Empirical frequencies of ``sample_indices`` (indices into ``atoms``)."""
        atoms = np.asarray(atoms, dtype=float)
        idx = np.asarray(sample_indices, dtype=int)
        if idx.size == 0:
            raise RiskInputError("need at least one sample")
        counts = np.bincount(idx, minlength=atoms.shape[0]).astype(float)
        w = counts / counts.sum()
        # exact normalisation guards the 1e-12 invariant against rounding
        w[np.argmax(w)] += 1.0 - w.sum()
        return cls(atoms, w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def expectation(self, values) -> float:
        return float(np.dot(self.weights, _values(values, self)))

    def cost_matrix(self) -> np.ndarray:
        """Pairwise Euclidean distances between atoms."""
        a = self.atoms
        return np.linalg.norm(a[:, None, :] - a[None, :, :], axis=-1)


@dataclass(frozen=True)
class AmbiguitySet:
    """Ball of radius ``radius`` around ``reference`` in TV or order-1 Wasserstein distance."""

    metric: Metric
    radius: float
    reference: DiscreteDistribution

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if not self.radius >= 0:
            raise RiskInputError("radius must be nonnegative")

    def distance(self, mu) -> float:
        mu = np.asarray(mu, dtype=float)
        if self.metric is Metric.TV:
            return tv_distance(mu, self.reference.weights)
        return wasserstein_distance(mu, self.reference.weights, self.reference.cost_matrix())

    def contains(self, mu, tol: float = 1e-9) -> bool:
        return self.distance(mu) <= self.radius + tol


@dataclass(frozen=True)
class RiskSpec:
    beta: float
    delta: float = 0.0

    def __post_init__(self):
        _check_beta(self.beta)


def _check_beta(beta):
    if not (0.0 < beta <= 1.0):
        raise RiskInputError(f"beta must lie in (0, 1], got {beta}")


def _values(values, dist):
    z = np.asarray(values, dtype=float).reshape(-1)
    if z.shape[0] != dist.size:
        raise RiskInputError(f"expected {dist.size} values, got {z.shape[0]}")
    return z


def cvar(values, dist: DiscreteDistribution, beta: float) -> float:
    """Conditional value-at-risk at level ``beta`` of a discrete random variable.

    Minimises ``t + E[Z - t]_+ / beta`` over ``t``; the objective is piecewise
    linear with kinks at the atom values, so scanning those is exact.
    """
    _check_beta(beta)
    z = _values(values, dist)
    p = dist.weights
    t = z[:, None]
    obj = z + (np.maximum(z[None, :] - t, 0.0) @ p) / beta
    return float(obj.min())


def var(values, dist: DiscreteDistribution, beta: float) -> float:
    """Left-side ``(1 - beta)``-quantile."""
    _check_beta(beta)
    z = _values(values, dist)
    order = np.argsort(z, kind="stable")
    cum = np.cumsum(dist.weights[order])
    k = int(np.argmax(cum >= (1.0 - beta) - 1e-12))
    return float(z[order][k])


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def wasserstein_distance(p, q, cost) -> float:
    """Order-1 transport distance between weight vectors on a common support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    L = p.shape[0]
    # kappa[i, l] flattened row-major; rows sum to p, columns to q
    A = np.vstack([np.kron(np.eye(L), np.ones(L)), np.kron(np.ones(L), np.eye(L))])
    b = np.concatenate([p, q])
    res = solve_lp(LinearProgram(np.asarray(cost).reshape(-1), A, b, b, lb=np.zeros(L * L)))
    if not res.ok:
        raise RuntimeError(f"transport LP failed: {res.kind}")
    return res.objective


def _check_amb(amb, metric):
    if amb.metric is not metric:
        raise RiskInputError(f"expected a {metric.value} ambiguity set")
    if amb.radius < 0:
        raise RiskInputError("radius must be nonnegative")


def _tv_greedy_max(a, p, theta):
    """max_mu sum(mu * a) over the TV ball; a has shape (..., L)."""
    order = np.argsort(a, axis=-1, kind="stable")
    a_s = np.take_along_axis(a, order, axis=-1)
    p_s = p[order]
    before = np.cumsum(p_s, axis=-1) - p_s
    moved = np.clip(theta - before, 0.0, p_s)
    top = a_s[..., -1:]
    return a @ p + (moved * (top - a_s)).sum(axis=-1)


def worst_case_cvar_tv_oracle(values, amb: AmbiguitySet, beta: float) -> float:
    """sup of CVaR over a TV ball by greedy mass transfer for each candidate threshold."""
    _check_amb(amb, Metric.TV)
    _check_beta(beta)
    z = _values(values, amb.reference)
    a = np.maximum(z[None, :] - z[:, None], 0.0)
    best = _tv_greedy_max(a, amb.reference.weights, amb.radius)
    return float((z + best / beta).min())


def worst_case_cvar_w1_oracle(values, amb: AmbiguitySet, beta: float) -> float:
    """sup of CVaR over a Wasserstein ball as one LP over distributions.

    Uses ``CVaR_mu(Z) = max{q @ z : 0 <= q <= mu / beta, sum(q) = 1}`` with
    ``mu_i = sum_l kappa[i, l]`` and ``kappa`` a transport plan from the
    reference of cost at most ``radius``.
    """
    _check_amb(amb, Metric.WASSERSTEIN)
    return _w1_primal(values, amb, beta)[0]


def _w1_primal(values, amb, beta):
    _check_beta(beta)
    ref = amb.reference
    z = _values(values, ref)
    L = ref.size
    cost = ref.cost_matrix()
    # variables: kappa[i, l] row-major, then q
    n = L * L + L
    A = np.zeros((2 * L + 2, n))
    A[:L, :L * L] = np.kron(np.ones(L), np.eye(L))
    A[L, :L * L] = cost.reshape(-1)
    A[L + 1, L * L:] = 1.0
    A[L + 2:, :L * L] = -np.kron(np.eye(L), np.ones(L))
    A[L + 2:, L * L:] = beta * np.eye(L)
    lo = np.concatenate([ref.weights, [-np.inf, 1.0], np.full(L, -np.inf)])
    hi = np.concatenate([ref.weights, [amb.radius, 1.0], np.zeros(L)])
    c = np.concatenate([np.zeros(L * L), -z])
    res = solve_lp(LinearProgram(c, A, lo, hi, lb=np.zeros(n)))
    if not res.ok:
        raise RuntimeError(f"worst-case transport LP failed: {res.kind}")
    return float(-res.objective), res.x[L * L:]


def worst_case_weights(values, amb: AmbiguitySet, beta: float) -> np.ndarray:
    """Weights ``q`` attaining the worst-case CVaR as ``q @ values``.

    ``q`` is the CVaR tail weighting of a worst-case distribution, so
    ``q @ v <= sup CVaR(v)`` for every other value vector ``v``; this makes
    ``q`` a subgradient of the worst-case CVaR at ``values``.
    """
    _check_beta(beta)
    z = _values(values, amb.reference)
    if amb.metric is Metric.WASSERSTEIN:
        return _w1_primal(z, amb, beta)[1]
    p = amb.reference.weights
    order = np.argsort(z, kind="stable")
    before = np.cumsum(p[order]) - p[order]
    moved = np.clip(amb.radius - before, 0.0, p[order])
    mu = p.copy()
    mu[order] -= moved
    mu[order[-1]] += moved.sum()
    q = np.zeros_like(p)
    room = 1.0
    for i in order[::-1]:
        take = min(mu[i] / beta, room)
        q[i] = take
        room -= take
        if room <= 0:
            break
    return q


def tv_radius_for_confidence(N: int, zeta: float, L: int) -> float:
    """TV radius holding the true distribution with probability ``zeta`` after ``N`` samples."""
    if N < 1:
        raise RiskInputError("N must be at least 1")
    if not (0.0 < zeta < 1.0):
        raise RiskInputError("zeta must lie in (0, 1)")
    if L < 2:
        raise RiskInputError("support size must be at least 2")
    return 0.5 * math.sqrt((2.0 / N) * (L * math.log(2.0) + math.log(1.0 / (1.0 - zeta))))


def worst_case_cvar(values, amb: AmbiguitySet, beta: float) -> np.ndarray:
    """Vectorised worst-case CVaR for a batch of value vectors (shape ``(B, L)``).

    TV: for a fixed threshold the worst case moves mass greedily to the top
    atom, which is linear in the threshold between atom values, so scanning
    atom values is exact.

    Wasserstein: minimising the Lagrangian over the threshold leaves
    ``h(lam) = lam*theta/beta + CVaR_p(c(lam))`` with
    ``c_l(lam) = max_i(z_i - lam*d_il)``.  ``h`` is convex piecewise linear and
    its kinks lie where two lines ``z_i - lam*d_il`` cross, so scanning those
    crossings is exact.
    """
    _check_beta(beta)
    Z = np.atleast_2d(np.asarray(values, dtype=float))
    p = amb.reference.weights
    B, L = Z.shape
    if L != p.shape[0]:
        raise RiskInputError(f"expected {p.shape[0]} values per row, got {L}")
    if amb.metric is Metric.TV:
        a = np.maximum(Z[:, None, :] - Z[:, :, None], 0.0)  # (B, t, L)
        best = _tv_greedy_max(a, p, amb.radius)
        return (Z + best / beta).min(axis=1)
    return _w1_scan(Z, p, amb.reference.cost_matrix(), amb.radius, beta)


def _cvar_rows(C, p, beta):
    """CVaR of each row of ``C`` (shape (..., L)) under weights ``p``."""
    a = np.maximum(C[..., None, :] - C[..., :, None], 0.0)
    return (C + (a @ p) / beta).min(axis=-1)


def _w1_scan(Z, p, d, theta, beta, chunk=4096):
    B, L = Z.shape
    dd = (d[:, :, None, None] - d[None, None, :, :]).reshape(L * L, L * L)  # (i l), (k m)
    out = np.empty(B)
    for b in range(B):
        z = Z[b]
        dz = np.repeat(z, L)[:, None] - np.repeat(z, L)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = dz / dd
        lam = np.unique(lam[np.isfinite(lam) & (lam > 0)])
        lam = np.concatenate([[0.0], lam])
        best = np.inf
        for s in range(0, lam.size, chunk):
            lc = lam[s:s + chunk]
            C = (z[None, :, None] - lc[:, None, None] * d[None]).max(axis=1)  # (n, L)
            best = min(best, float((lc * theta / beta + _cvar_rows(C, p, beta)).min()))
        out[b] = best
    return out
