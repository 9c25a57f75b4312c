"""Shipped scenarios, the Beta-binomial obstacle sampler and collision metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .ocp import LinearDynamics, StageCost
from .reform import AffineConstraint, ConstraintAtomValues, constant_constraint
from .risk import DiscreteDistribution


class ScenarioConfigError(ValueError):
    pass


# -- sampler ----------------------------------------------------------------

@dataclass(frozen=True)
class BetaBinomialSampler:
    """Beta-binomial outcomes mapped onto an evenly spaced support."""

    n_outcomes: int = 9
    a: float = 10.0
    b: float = 9.0
    low: float = -0.9
    high: float = 0.9

    @property
    def support(self) -> np.ndarray:
        n = self.n_outcomes - 1
        return self.low + (self.high - self.low) * np.arange(n + 1) / n

    @property
    def pmf(self) -> np.ndarray:
        n = self.n_outcomes - 1
        k = np.arange(n + 1)
        log_choose = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
        log_beta = (gammaln(k + self.a) + gammaln(n - k + self.b) - gammaln(n + self.a + self.b)
                    - (gammaln(self.a) + gammaln(self.b) - gammaln(self.a + self.b)))
        p = np.exp(log_choose + log_beta)
        return p / p.sum()

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be nonnegative")
        return rng.choice(self.n_outcomes, size=n, p=self.pmf)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.support[self.sample_indices(rng, n)]


# -- geometry ---------------------------------------------------------------

def point_to_square_distance(points, centers, side: float) -> np.ndarray:
    """Euclidean distance from points to axis-aligned squares (0 inside); broadcasts."""
    d = np.abs(np.asarray(points, dtype=float) - np.asarray(centers, dtype=float)) - side / 2
    return np.linalg.norm(np.maximum(d, 0.0), axis=-1)


def min_clearance(positions, obstacle_centers, side: float) -> float:
    """Smallest distance over steps and agents.

    ``positions`` has shape ``(T, n_agents, 2)`` and ``obstacle_centers`` ``(T, 2)``.
    """
    P = np.asarray(positions, dtype=float)
    O = np.asarray(obstacle_centers, dtype=float)
    if P.shape[0] == 0:
        return math.inf
    return float(point_to_square_distance(P, O[:, None, :], side).min())


FACES = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


@dataclass(frozen=True)
class ObstacleConstraint:
    """Agents keep ``d_min`` from a square obstacle translated by ``direction * w``.

    The exact constraint ``max_i d_min - dist(C_i x, O(w))`` is nonconvex.  Its
    convex models replace the distance of agent ``i`` by the signed distance
    to one supporting face ``n_i``; each choice of faces gives an affine
    upper bound on the exact constraint.
    """

    selectors: tuple           # per agent, (2, n_x) position selector
    center: np.ndarray
    side: float
    direction: np.ndarray
    d_min: float
    atoms: np.ndarray          # (L,)
    _options: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=float))
        object.__setattr__(self, "atoms", np.asarray(self.atoms, dtype=float).reshape(-1))
        sel = tuple(np.asarray(C, dtype=float) for C in self.selectors)
        object.__setattr__(self, "selectors", sel)
        opts = []
        for combo in itertools.product(range(len(FACES)), repeat=len(sel)):
            slopes, offsets = [], []
            for C, f in zip(sel, combo):
                n = FACES[f]
                slopes.append(np.repeat((-n @ C)[None], self.atoms.size, axis=0))
                offsets.append(self.d_min + n @ self.center + self.side / 2
                               + (n @ self.direction) * self.atoms)
            opts.append(ConstraintAtomValues(np.array(slopes), np.array(offsets)))
        object.__setattr__(self, "_options", tuple(opts))

    def options(self):
        return self._options

    def obstacle_centers(self, w) -> np.ndarray:
        return self.center + np.asarray(w, dtype=float).reshape(-1, 1) * self.direction

    def positions(self, states) -> np.ndarray:
        X = np.atleast_2d(np.asarray(states, dtype=float))
        return np.stack([X @ C.T for C in self.selectors], axis=1)  # (T, agents, 2)

    def exact_values(self, x) -> np.ndarray:
        """Exact constraint value at every atom; ``(L,)`` for one state, ``(B, L)`` for a batch."""
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        P = self.positions(X)                            # (B, agents, 2)
        O = self.obstacle_centers(self.atoms)            # (L, 2)
        dist = point_to_square_distance(P[:, None, :, :], O[None, :, None, :], self.side)
        g = (self.d_min - dist).max(axis=-1)             # (B, L)
        return g[0] if single else g


# -- scenarios --------------------------------------------------------------

class Scenario:
    """Problem data shared by the MPC loop; subclasses fill in the fields."""

    name: str
    dynamics: LinearDynamics
    cost: StageCost
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    x_S: np.ndarray
    x_F: np.ndarray
    K: int
    beta: float
    delta: float
    n0: int
    iterations: int
    atoms: np.ndarray
    true_pmf: np.ndarray
    constraint: object

    def robust_trajectory(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(self.atoms.shape[0], size=n, p=self.true_pmf)

    def true_distribution(self) -> DiscreteDistribution:
        return DiscreteDistribution(self.atoms, self.true_pmf)

    def exact_constraint(self, states) -> np.ndarray:
        return self.constraint.exact_values(states)

    def metrics(self, states, sample_indices) -> dict:
        return {}

    def validate_robust(self, tol: float = 0.0) -> None:
        """Every state of the seed trajectory is safe for every atom under some model."""
        X, U = self.robust_trajectory()
        for x in X:
            worst = min(float(o.evaluate(x).max()) for o in self.constraint.options())
            if worst > self.delta + tol:
                raise ScenarioConfigError(f"seed trajectory state {x} is not robustly safe ({worst:.3g})")
            if np.any(x < self.x_lo - 1e-12) or np.any(x > self.x_hi + 1e-12):
                raise ScenarioConfigError(f"seed trajectory state {x} leaves the state box")
        for u in U:
            if np.any(u < self.u_lo - 1e-12) or np.any(u > self.u_hi + 1e-12):
                raise ScenarioConfigError(f"seed input {u} leaves the input box")
        for k in range(U.shape[0]):
            if np.abs(self.dynamics.step(X[k], U[k]) - X[k + 1]).max() > 1e-9:
                raise ScenarioConfigError("seed trajectory is inconsistent with the dynamics")
        if np.abs(X[-1] - self.x_F).max() > 0:
            raise ScenarioConfigError("seed trajectory does not end at the target")


class IntegratorScenario(Scenario):
    """Scalar integrator with a slack obstacle constraint; converges only asymptotically."""

    def __init__(self):
        self.name = "integrator"
        self.dynamics = LinearDynamics([[1.0]], [[1.0]])
        self.x_F = np.array([0.0])
        self.cost = StageCost.quadratic([[1.0]], [[0.1]], self.x_F)
        self.x_lo, self.x_hi = np.array([-10.0]), np.array([10.0])
        self.u_lo, self.u_hi = np.array([-1.0]), np.array([1.0])
        self.x_S = np.array([1.0])
        self.K = 2
        self.beta, self.delta = 0.5, 0.0
        self.n0, self.iterations = 5, 3
        self.atoms = np.array([0.0, 1.0])
        self.true_pmf = np.array([0.5, 0.5])
        # g(x, w) = x - w - 1.5 never binds on [-10, 1]
        self.constraint = AffineConstraint(ConstraintAtomValues.affine(
            np.ones((2, 1)), -self.atoms - 1.5))

    def robust_trajectory(self):
        return np.array([[1.0], [0.0]]), np.array([[-1.0]])


class OneStepScenario(Scenario):
    """Planar integrator with a 1-norm stage cost; the target is reached exactly."""

    def __init__(self, c_x: float = 1.0, c_u: float = 0.5):
        self.name = "one-step"
        self.dynamics = LinearDynamics(np.eye(2), np.eye(2))
        self.x_F = np.zeros(2)
        self.cost = StageCost.norm(c_x, c_u, self.x_F, ord=1)
        self.x_lo, self.x_hi = np.full(2, -5.0), np.full(2, 5.0)
        self.u_lo, self.u_hi = np.full(2, -1.0), np.full(2, 1.0)
        self.x_S = np.array([3.0, -2.0])
        self.K = 2
        self.beta, self.delta = 0.5, 0.0
        self.n0, self.iterations = 5, 3
        self.atoms = np.array([0.0, 1.0])
        self.true_pmf = np.array([0.5, 0.5])
        self.constraint = constant_constraint(-1.0, 2, 2)
        # one-step reachable set: the input box around the target
        self.reach_radius = 1.0

    def robust_trajectory(self):
        X = np.array([[3.0, -2.0], [2.0, -1.0], [1.0, 0.0], [0.0, 0.0]])
        return X, np.diff(X, axis=0)

    def min_cost_outside_reach(self, spacing: float = 0.01) -> float:
        """Smallest state cost over grid points outside the one-step reachable box."""
        g = np.arange(self.x_lo[0], self.x_hi[0] + spacing / 2, spacing)
        Z = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
        out = np.abs(Z - self.x_F).max(axis=1) > self.reach_radius + 1e-12
        return float(self.cost.c_x * np.abs(Z[out] - self.x_F).sum(axis=1).min())


# two double integrators; the y2 <- v_y2 entry is added below
_A_UNCOUPLED = np.array([
    [1, 0, 1, 0, 0, 0, 0, 0],
    [0, 1, 0, 1, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 0, 0],
    [0, 0, 0, 0, 1, 0, 1, 0],
    [0, 0, 0, 0, 0, 1, 0, 0],
    [0, 0, 0, 0, 0, 0, 1, 0],
    [0, 0, 0, 0, 0, 0, 0, 1],
], dtype=float)
_A_TWO_ROBOT = _A_UNCOUPLED.copy()
_A_TWO_ROBOT[5, 7] = 1.0
_B_TWO_ROBOT = np.zeros((8, 4))
_B_TWO_ROBOT[[2, 3, 6, 7], [0, 1, 2, 3]] = 1.0


def uncoupled_two_robot_matrix() -> np.ndarray:
    """State matrix without the y2 <- v_y2 coupling; the second agent cannot move vertically."""
    return _A_UNCOUPLED.copy()


@dataclass
class TwoRobotConfig:
    x_S: tuple = (0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0)
    x_F: tuple = (5.0, 3.0, 0.0, 0.0, 6.0, 2.0, 0.0, 0.0)
    obstacle_center: tuple = (3.0, 1.2)
    obstacle_side: float = 1.8
    direction: tuple = (1 / math.sqrt(2), -1 / math.sqrt(2))
    d_min: float = 0.02
    q_diag: tuple = (1.0,) * 8
    r_diag: tuple = (0.1,) * 4
    K: int = 5
    beta: float = 0.2
    delta: float = 0.0
    n0: int = 5
    iterations: int = 20
    u_max: float = 1.0
    v_max: float = 2.0
    z_range: tuple = (-2.0, 8.0)
    y_range: tuple = (-3.0, 5.0)
    bb_outcomes: int = 9
    bb_a: float = 10.0
    bb_b: float = 9.0
    seed_cruise_y: float = 3.4

    @classmethod
    def from_text(cls, text: str) -> "TwoRobotConfig":
        """Parse ``key = value`` lines; comments start with ``#``."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ScenarioConfigError(f"line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ScenarioConfigError(f"line {lineno}: unknown key {key!r}")
            default = getattr(cls, key)
            try:
                if isinstance(default, tuple):
                    kw[key] = tuple(float(v) for v in val.replace(",", " ").split())
                elif isinstance(default, int):
                    kw[key] = int(val)
                else:
                    kw[key] = float(val)
            except ValueError as exc:
                raise ScenarioConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "TwoRobotConfig":
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = " + (" ".join(repr(float(x)) for x in v)
                                         if isinstance(v, tuple) else repr(v)))
        return "\n".join(out) + "\n"


class TwoRobotScenario(Scenario):
    """Two planar double integrators passing a randomly shifting square obstacle."""

    def __init__(self, config: TwoRobotConfig | None = None):
        c = config or TwoRobotConfig()
        self.config = c
        self.name = "two-robot"
        self.dynamics = LinearDynamics(_A_TWO_ROBOT, _B_TWO_ROBOT)
        self.x_S = np.array(c.x_S, dtype=float)
        self.x_F = np.array(c.x_F, dtype=float)
        self.cost = StageCost.quadratic(np.diag(c.q_diag), np.diag(c.r_diag), self.x_F)
        pos_lo = np.array([c.z_range[0], c.y_range[0]])
        pos_hi = np.array([c.z_range[1], c.y_range[1]])
        v = np.full(2, c.v_max)
        self.x_lo = np.concatenate([pos_lo, -v, pos_lo, -v])
        self.x_hi = np.concatenate([pos_hi, v, pos_hi, v])
        self.u_lo, self.u_hi = np.full(4, -c.u_max), np.full(4, c.u_max)
        self.K, self.beta, self.delta = c.K, c.beta, c.delta
        self.n0, self.iterations = c.n0, c.iterations
        self.sampler = BetaBinomialSampler(c.bb_outcomes, c.bb_a, c.bb_b)
        self.atoms = self.sampler.support
        self.true_pmf = self.sampler.pmf
        C1 = np.zeros((2, 8))
        C1[0, 0] = C1[1, 1] = 1.0
        C2 = np.zeros((2, 8))
        C2[0, 4] = C2[1, 5] = 1.0
        self.constraint = ObstacleConstraint((C1, C2), np.array(c.obstacle_center), c.obstacle_side,
                                             np.array(c.direction), c.d_min, self.atoms)

    def sample_indices(self, rng, n):
        return self.sampler.sample_indices(rng, n)

    def robust_trajectory(self):
        """Three synchronised rest-to-rest moves around the obstacle's reachable hull.

        Agent 1 climbs above the hull, crosses, then descends to its target;
        agent 2 crosses below the hull, then climbs on the far side.
        """
        c = self.config
        z1, y1 = self.x_S[0], self.x_S[1]
        z2, y2 = self.x_S[4], self.x_S[5]
        legs = [
            ((0.0, c.seed_cruise_y - y1), (self.x_F[4] - z2, 0.0)),
            ((self.x_F[0] - z1, 0.0), (0.0, self.x_F[5] - y2)),
            ((0.0, self.x_F[1] - c.seed_cruise_y), (0.0, 0.0)),
        ]
        m = 4
        X = [self.x_S.copy()]
        U = []
        for d1, d2 in legs:
            a = np.array([*d1, *d2]) / (m * m)
            for k in range(2 * m):
                u = a if k < m else -a
                U.append(u)
                X.append(self.dynamics.step(X[-1], u))
        X = np.array(X)
        if np.abs(X[-1] - self.x_F).max() > 1e-9:
            raise ScenarioConfigError("seed trajectory misses the target")
        X[-1] = self.x_F
        return X, np.array(U)

    def metrics(self, states, sample_indices) -> dict:
        """Clearance against the realised obstacle; sample ``t`` pairs with state ``x_t``."""
        X = np.atleast_2d(np.asarray(states, dtype=float))
        idx = np.asarray(sample_indices, dtype=int)
        n = min(len(X), len(idx))
        centers = self.constraint.obstacle_centers(self.atoms[idx[:n]])
        clr = min_clearance(self.constraint.positions(X[:n]), centers, self.constraint.side)
        return {"min_clearance": clr, "collision": bool(clr <= 0.0)}
