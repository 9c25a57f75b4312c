"""Sampled safe set: stored closed-loop states with their realised cost-to-go."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .reform import Evaluator, dual_evaluator, state_risk
from .risk import AmbiguitySet, RiskSpec

MATCH_TOL = 1e-9
PRUNE_TOL = 1e-9


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class SafeEntry:
    iteration: int
    t: int
    state: tuple[float, ...]
    cost: float

    def __post_init__(self):
        if not (np.isfinite(self.cost) and self.cost >= 0):
            raise ValueError(f"cost-to-go must be finite and nonnegative, got {self.cost}")


@dataclass(frozen=True)
class SafeSet:
    """Immutable collection of entries; every update returns a new value.

    ``totals`` maps each live iteration id to its full trajectory cost, which
    seeds the constraint linearisation at the start of the next iteration.
    """

    entries: tuple[SafeEntry, ...] = ()
    ids: frozenset[int] = frozenset()
    totals: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        stray = {e.iteration for e in self.entries} - set(self.ids)
        if stray:
            raise ValueError(f"entries reference ids outside the live set: {sorted(stray)}")

    def __len__(self):
        return len(self.entries)

    @property
    def states(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0))
        return np.array([e.state for e in self.entries])

    def trajectory(self, iteration: int) -> list[SafeEntry]:
        return sorted((e for e in self.entries if e.iteration == iteration), key=lambda e: e.t)

    def successor(self, entry: SafeEntry) -> SafeEntry:
        """Next stored entry along the same trajectory, or the entry itself at the end."""
        for e in self.entries:
            if e.iteration == entry.iteration and e.t == entry.t + 1:
                return e
        return entry

    def terminal_candidates(self):
        """Distinct stored states with their minimum cost-to-go.

        Returns ``(states (C, n), values (C,), witnesses)`` where each witness is
        an entry attaining the minimum; states are sorted lexicographically so
        the candidate order is canonical.
        """
        best: dict[tuple, SafeEntry] = {}
        for e in self.entries:
            key = _key(e.state)
            cur = best.get(key)
            if cur is None or (e.cost, e.iteration, e.t) < (cur.cost, cur.iteration, cur.t):
                best[key] = e
        keys = sorted(best)
        wit = [best[k] for k in keys]
        if not wit:
            return np.zeros((0, 0)), np.zeros(0), []
        return np.array([w.state for w in wit]), np.array([w.cost for w in wit]), wit

    def best_iteration(self) -> int | None:
        """Live id with the lowest full-trajectory cost (lowest id on ties)."""
        live = [(self.totals[i], i) for i in self.ids if i in self.totals]
        return min(live)[1] if live else None

    def dumps(self) -> str:
        out = io.StringIO()
        out.write("# iteration t cost_to_go state...\n")
        for e in sorted(self.entries, key=lambda e: (e.iteration, e.t)):
            out.write(" ".join([str(e.iteration), str(e.t), repr(float(e.cost))]
                               + [repr(float(v)) for v in e.state]) + "\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "SafeSet":
        entries = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            entries.append(SafeEntry(int(tok[0]), int(tok[1]), tuple(float(v) for v in tok[3:]),
                                     float(tok[2])))
        return cls(tuple(entries), frozenset(e.iteration for e in entries))


def _key(state) -> tuple:
    # states come out of one deterministic code path; rounding far below the
    # match tolerance merges only bitwise-near duplicates
    return tuple(np.round(np.asarray(state, dtype=float), 12).tolist())


StageCostFn = Callable[[np.ndarray, np.ndarray], float]


def _as_trajectory(states, inputs):
    X = np.asarray(states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    T = X.shape[0] - 1
    U = np.asarray(inputs, dtype=float)
    if U.size == 0 and T == 0:
        return X, np.zeros((0, 0))
    if U.ndim == 1:
        U = U[:, None] if U.shape[0] == T else U[None, :]
    if U.shape[0] != T:
        raise TrajectoryError("need exactly one input fewer than states")
    return X, U


def _check_end(X, x_F, tol):
    if x_F is not None and np.linalg.norm(X[-1] - np.asarray(x_F, dtype=float).reshape(-1)) > tol:
        raise TrajectoryError("trajectory does not end at the target")


def cost_to_go(states, inputs, stage_cost: StageCostFn, t: int = 0, x_F=None,
               tol: float = MATCH_TOL) -> float:
    """Sum of stage costs from step ``t`` to the end of a trajectory that reaches ``x_F``."""
    X, U = _as_trajectory(states, inputs)
    _check_end(X, x_F, tol)
    if not 0 <= t <= U.shape[0]:
        raise TrajectoryError(f"t={t} outside the trajectory")
    return float(sum(stage_cost(X[k], U[k]) for k in range(t, U.shape[0])))


def append_trajectory(ss: SafeSet, j: int, states, inputs, stage_cost: StageCostFn,
                      x_F=None, tol: float = MATCH_TOL) -> SafeSet:
    """Add entries for ``t = 1..T_j`` of iteration ``j`` with their cost-to-go."""
    X, U = _as_trajectory(states, inputs)
    _check_end(X, x_F, tol)
    T = U.shape[0]
    r = np.array([stage_cost(X[k], U[k]) for k in range(T)])
    tail = np.concatenate([np.cumsum(r[::-1])[::-1], [0.0]])
    new = [SafeEntry(j, t, tuple(X[t].tolist()), float(tail[t])) for t in range(1, T + 1)]
    totals = dict(ss.totals)
    totals[j] = float(tail[0])
    return SafeSet(ss.entries + tuple(new), ss.ids | {j}, totals)


def min_cost_to_go(ss: SafeSet, x) -> float:
    x = np.asarray(x, dtype=float)
    best = np.inf
    for e in ss.entries:
        if np.max(np.abs(np.asarray(e.state) - x)) <= MATCH_TOL:
            best = min(best, e.cost)
    return best


def unsafe_ids(ss: SafeSet, amb: AmbiguitySet, g, risk: RiskSpec,
               evaluator: Evaluator = dual_evaluator, tol: float = PRUNE_TOL) -> set[int]:
    if not ss.entries:
        return set()
    risks = state_risk(g, ss.states, amb, risk.beta, evaluator)
    return {e.iteration for e, v in zip(ss.entries, risks) if v > risk.delta + tol}


def prune_unsafe(ss: SafeSet, amb: AmbiguitySet, g, risk: RiskSpec,
                 evaluator: Evaluator = dual_evaluator, tol: float = PRUNE_TOL) -> SafeSet:
    """Drop every iteration id with at least one stored state failing the DR check."""
    bad = unsafe_ids(ss, amb, g, risk, evaluator, tol)
    if not bad:
        return ss
    keep = tuple(e for e in ss.entries if e.iteration not in bad)
    totals = {i: v for i, v in ss.totals.items() if i not in bad}
    return SafeSet(keep, ss.ids - bad, totals)


def is_subset(a: SafeSet, b: SafeSet) -> bool:
    """Every (id, t, state, cost) of ``a`` also appears in ``b``."""
    keys = {(e.iteration, e.t, e.state, e.cost) for e in b.entries}
    return all((e.iteration, e.t, e.state, e.cost) in keys for e in a.entries)
