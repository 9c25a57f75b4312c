"""Closed-loop DR-MPC rollouts and the iteration loop that grows the safe set."""

from __future__ import annotations

import csv
import enum
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .numerics import AdmmSettings
from .ocp import DRSpec, FiniteHorizonProblem, OcpInfeasible, solve_fhocp
from .reform import dual_evaluator, option_risks, primal_evaluator
from .risk import AmbiguitySet, DiscreteDistribution, Metric, RiskSpec, cvar, tv_radius_for_confidence
from .safe_set import SafeSet, append_trajectory, prune_unsafe

log = logging.getLogger(__name__)

EXACT_TOL = 1e-9


class Termination(str, enum.Enum):
    EXACT_TARGET = "ExactTarget"
    EPSILON_BALL = "EpsilonBall"
    STEP_CAP = "StepCap"


class RecursiveFeasibilityError(RuntimeError):
    """The OCP became infeasible along a closed-loop rollout."""


class StepCapError(RuntimeError):
    pass


DEFAULT_THETA = 0.05


@dataclass(frozen=True)
class RunConfig:
    K: int | None = None
    beta: float | None = None
    delta: float | None = None
    theta: float | None = None
    zeta: float | None = None
    metric: str = "tv"
    epsilon: float = 1e-3
    t_max: int = 200
    iterations: int | None = None
    frozen_ambiguity: bool = False
    seed: int = 0
    strict: bool = True
    n0: int | None = None
    evaluator: str = "primal"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.theta is not None and self.zeta is not None:
            raise ValueError("set at most one of theta (fixed radius) or zeta (confidence)")
        if self.theta is None and self.zeta is None:
            object.__setattr__(self, "theta", DEFAULT_THETA)
        if self.theta is not None and self.theta < 0:
            raise ValueError("theta must be nonnegative")
        if self.zeta is not None and Metric(self.metric) is not Metric.TV:
            raise ValueError("confidence-based radius is only available for the TV metric")
        if self.evaluator not in ("primal", "dual"):
            raise ValueError("evaluator must be 'primal' or 'dual'")

    def resolve(self, scenario) -> "RunConfig":
        """Fill unset fields from the scenario defaults."""
        return replace(self,
                       K=self.K if self.K is not None else scenario.K,
                       beta=self.beta if self.beta is not None else scenario.beta,
                       delta=self.delta if self.delta is not None else scenario.delta,
                       iterations=self.iterations if self.iterations is not None else scenario.iterations,
                       n0=self.n0 if self.n0 is not None else scenario.n0)

    @property
    def risk(self) -> RiskSpec:
        return RiskSpec(self.beta, self.delta)


@dataclass
class IterationRecord:
    iteration: int
    states: np.ndarray
    inputs: np.ndarray
    cost: float
    objectives: list
    stage_costs: list
    termination: Termination
    margins: list
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    n_samples: int = 0
    theta: float = 0.0
    safe_set_size: int = 0
    pruned_ids: tuple = ()
    metrics: dict = field(default_factory=dict)
    solve_seconds: float = 0.0

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    def summary(self) -> dict:
        return {"iteration": self.iteration, "T": self.T, "cost": self.cost,
                "termination": self.termination.value, "n_samples": self.n_samples,
                "theta": self.theta, "safe_set_size": self.safe_set_size,
                "pruned_ids": list(self.pruned_ids),
                "min_margin": float(min(self.margins)) if self.margins else None,
                **{k: _jsonable(v) for k, v in self.metrics.items()}}


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v) if np.isfinite(v) else None
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# -- ambiguity sets ---------------------------------------------------------

def build_ambiguity(scenario, samples, cfg: RunConfig) -> AmbiguitySet:
    ref = DiscreteDistribution.empirical(scenario.atoms, samples)
    if cfg.zeta is not None:
        theta = tv_radius_for_confidence(len(samples), cfg.zeta, len(scenario.atoms))
    else:
        theta = cfg.theta
    return AmbiguitySet(Metric(cfg.metric), theta, ref)


# -- one iteration ----------------------------------------------------------

def _evaluator(cfg):
    return dual_evaluator if cfg.evaluator == "dual" else primal_evaluator


def _pick_forms(scenario, refs, amb, beta):
    """Constraint model with the smallest worst-case CVaR at each reference state."""
    opts = scenario.constraint.options()
    risks = option_risks(scenario.constraint, refs, amb, beta)
    best = risks.argmin(axis=1)
    return [opts[b] for b in best], risks[np.arange(len(best)), best]


def dr_mpc(ss: SafeSet, amb: AmbiguitySet, cfg: RunConfig, scenario, iteration: int = 0,
           settings: AdmmSettings | None = None) -> IterationRecord:
    """Roll the receding-horizon controller out from the start state.

    Each slot of the horizon uses the convex constraint model selected at a
    reference state: the previous plan shifted by one step, or at time zero
    the cheapest stored trajectory.  The shifted plan stays feasible, which
    keeps the recursion feasible and the optimal cost decreasing.
    """
    cfg = cfg.resolve(scenario)
    if len(ss) == 0:
        raise ValueError("safe set is empty")
    K = cfg.K
    cand_states, cand_values, witnesses = ss.terminal_candidates()
    x_F = scenario.x_F
    x = scenario.x_S.copy()
    X, U, objs, stage, margins = [x.copy()], [], [], [], []

    best = ss.best_iteration()
    traj = [np.asarray(e.state) for e in ss.trajectory(best)] if best is not None else []
    refs = [x] + [traj[min(k - 1, len(traj) - 1)] if traj else x_F for k in range(1, K)]

    t0 = time.perf_counter()
    t = 0
    while True:
        err = np.linalg.norm(x - x_F)
        if err <= EXACT_TOL:
            x = x_F.copy()
            X[-1] = x
            kind = Termination.EXACT_TARGET
            break
        if err <= cfg.epsilon:
            kind = Termination.EPSILON_BALL
            break
        if t >= cfg.t_max:
            kind = Termination.STEP_CAP
            break
        refs[0] = x
        forms, ref_risk = _pick_forms(scenario, np.array(refs), amb, cfg.beta)
        margins.append(cfg.delta - float(ref_risk[0]))
        p = FiniteHorizonProblem(K, scenario.dynamics, scenario.cost, scenario.x_lo, scenario.x_hi,
                                 scenario.u_lo, scenario.u_hi, cand_states, cand_values,
                                 DRSpec(tuple(forms), amb, cfg.risk))
        try:
            sol = solve_fhocp(p, x, settings)
        except OcpInfeasible as exc:
            raise RecursiveFeasibilityError(
                f"iteration {iteration}, step {t}: OCP infeasible ({exc}); diagnostics: "
                f"{exc.diagnostics}") from exc
        u = sol.inputs[0]
        objs.append(sol.objective)
        stage.append(scenario.cost(x, u))
        x = scenario.dynamics.step(x, u)
        U.append(u)
        X.append(x.copy())
        refs = [sol.states[k + 1] for k in range(K)]
        t += 1

    if kind is Termination.EXACT_TARGET:
        objs.append(0.0)
    X, U = np.array(X), np.array(U).reshape(len(U), scenario.dynamics.n_u)
    cost = float(sum(stage))
    rec = IterationRecord(iteration, X, U, cost, objs, stage, kind, margins,
                          solve_seconds=time.perf_counter() - t0)
    if kind is Termination.STEP_CAP and cfg.strict:
        raise StepCapError(f"iteration {iteration}: no convergence within {cfg.t_max} steps")
    return rec


# -- iteration loop ---------------------------------------------------------

def initial_safe_set(scenario) -> SafeSet:
    scenario.validate_robust()
    X, U = scenario.robust_trajectory()
    return append_trajectory(SafeSet(), 0, X, U, scenario.cost, scenario.x_F)


@dataclass
class RunResult:
    records: list
    safe_sets: list
    ambiguity: list
    config: RunConfig

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def _stream(seed: int, iteration: int) -> np.random.Generator:
    # one stream per iteration: step t of iteration j sees the same draw in
    # every run sharing the seed, whatever the trajectory lengths were
    return np.random.default_rng([seed, iteration])


def run_iterations(cfg: RunConfig, scenario, settings: AdmmSettings | None = None,
                   keep_safe_sets: bool = False) -> RunResult:
    """Repeat the task, growing the dataset and re-checking stored states each time."""
    cfg = cfg.resolve(scenario)
    samples = list(scenario.sample_indices(_stream(cfg.seed, 0), cfg.n0))
    amb = build_ambiguity(scenario, samples, cfg)
    ss = initial_safe_set(scenario)
    records, sets, ambs = [], [ss] if keep_safe_sets else [], []
    evaluator = _evaluator(cfg)
    for j in range(1, cfg.iterations + 1):
        ambs.append(amb)
        try:
            rec = dr_mpc(ss, amb, cfg, scenario, iteration=j, settings=settings)
        except (RecursiveFeasibilityError, StepCapError) as exc:
            raise type(exc)(f"[run seed={cfg.seed}] {exc}") from exc
        new = scenario.sample_indices(_stream(cfg.seed, j), rec.T)
        samples.extend(new.tolist())
        rec.samples = new
        rec.n_samples = len(samples)
        rec.theta = amb.radius
        rec.metrics.update(scenario.metrics(rec.states, new))
        rec.metrics["true_cvar_violation"] = _true_violation(scenario, rec.states, cfg)
        if not cfg.frozen_ambiguity:
            amb = build_ambiguity(scenario, samples, cfg)
        tol = max(cfg.epsilon, EXACT_TOL) if rec.termination is not Termination.EXACT_TARGET else EXACT_TOL
        ss_new = append_trajectory(ss, j, rec.states, rec.inputs, scenario.cost, scenario.x_F, tol)
        pruned = prune_unsafe(ss_new, amb, scenario.constraint, cfg.risk, evaluator)
        rec.pruned_ids = tuple(sorted(ss_new.ids - pruned.ids))
        ss = pruned
        rec.safe_set_size = len(ss)
        if keep_safe_sets:
            sets.append(ss)
        records.append(rec)
        log.info("iteration %d: T=%d cost=%.6g %s theta=%.4g |S|=%d pruned=%s (%.2fs)", j, rec.T,
                 rec.cost, rec.termination.value, rec.theta, len(ss), list(rec.pruned_ids),
                 rec.solve_seconds)
    return RunResult(records, sets, ambs, cfg)


def _true_violation(scenario, states, cfg) -> bool:
    dist = scenario.true_distribution()
    g = scenario.exact_constraint(np.atleast_2d(states))
    return bool(any(cvar(v, dist, cfg.beta) > cfg.delta for v in np.atleast_2d(g)))


# -- diagnostics ------------------------------------------------------------

@dataclass(frozen=True)
class LyapunovReport:
    passed: bool
    max_violation: float
    worst_step: int | None
    checked: int


def assert_lyapunov_decrease(rec: IterationRecord, tol: float = 1e-5) -> LyapunovReport:
    """Check J(x_{t+1}) <= J(x_t) - r(x_t, u_t) + tol along a recorded rollout."""
    J, r = rec.objectives, rec.stage_costs
    n = min(len(J) - 1, len(r))
    worst, at = 0.0, None
    for t in range(max(n, 0)):
        v = J[t + 1] - (J[t] - r[t])
        if v > worst:
            worst, at = v, t
    return LyapunovReport(worst <= tol, float(worst), at, max(n, 0))


def check_visited_safety(rec: IterationRecord, amb: AmbiguitySet, scenario, cfg: RunConfig,
                         evaluator=dual_evaluator) -> float:
    """Largest DR-constraint value over visited states, evaluated with the best model per state.

    The model is chosen by the fast evaluator and then re-evaluated with
    ``evaluator`` (the dual LP by default).
    """
    cfg = cfg.resolve(scenario)
    opts = scenario.constraint.options()
    risks = option_risks(scenario.constraint, rec.states, amb, cfg.beta)
    best = risks.argmin(axis=1)
    vals = np.array([opts[b].evaluate(x) for b, x in zip(best, rec.states)])
    return float(np.max(evaluator(vals, amb, cfg.beta)) - cfg.delta)


# -- outputs ----------------------------------------------------------------

def write_iteration_table(records, path) -> None:
    """One row per iteration: iteration, T_j, realised cost, termination, clearance, samples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "T", "cost", "termination", "min_clearance", "n_samples"])
        for r in records:
            w.writerow([r.iteration, r.T, repr(r.cost), r.termination.value,
                        _jsonable(r.metrics.get("min_clearance", float("nan"))), r.n_samples])


def write_iteration_csv(rec: IterationRecord, scenario, path) -> None:
    """Per-step trajectory: state and input coordinates, stage cost, margin, clearance."""
    X, U = rec.states, rec.inputs
    nx, nu = X.shape[1], scenario.dynamics.n_u
    con = scenario.constraint
    clear = None
    if hasattr(con, "positions") and len(rec.samples):
        from .scenarios import point_to_square_distance
        centers = con.obstacle_centers(scenario.atoms[rec.samples])
        P = con.positions(X[:len(centers)])
        clear = point_to_square_distance(P, centers[:, None, :], con.side).min(axis=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
                   + ["stage_cost", "margin", "clearance"])
        for t in range(X.shape[0]):
            u = U[t] if t < U.shape[0] else np.full(nu, np.nan)
            r = rec.stage_costs[t] if t < len(rec.stage_costs) else ""
            m = rec.margins[t] if t < len(rec.margins) else ""
            c = clear[t] if clear is not None and t < len(clear) else ""
            w.writerow([t] + [repr(float(v)) for v in X[t]] + ["" if np.isnan(v) else repr(float(v)) for v in u]
                       + [r, m, c])


def write_summary(result: RunResult, path, extra: dict | None = None) -> None:
    cfg = result.config
    data = {"config": {k: _jsonable(v) for k, v in asdict(cfg).items()},
            "iterations": [r.summary() for r in result.records],
            "costs": [r.cost for r in result.records],
            "collisions": [bool(r.metrics.get("collision", False)) for r in result.records],
            "terminations": [r.termination.value for r in result.records],
            "n_samples": [r.n_samples for r in result.records],
            "theta": cfg.theta, "zeta": cfg.zeta, "seed": cfg.seed}
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2))


# -- estimator-style wrapper ------------------------------------------------

class IterativeDRMPC(BaseEstimator):
    """Estimator-style front end: ``fit`` runs the iterations, ``predict`` applies the learned controller.

    ``fit`` takes a scenario instead of a data matrix because the data (the
    uncertainty samples) are generated by running the controller.
    """

    def __init__(self, theta=0.05, zeta=None, metric="tv", K=None, beta=None, delta=None,
                 iterations=None, epsilon=1e-3, t_max=200, frozen_ambiguity=False, seed=0,
                 evaluator="primal"):
        self.theta = theta
        self.zeta = zeta
        self.metric = metric
        self.K = K
        self.beta = beta
        self.delta = delta
        self.iterations = iterations
        self.epsilon = epsilon
        self.t_max = t_max
        self.frozen_ambiguity = frozen_ambiguity
        self.seed = seed
        self.evaluator = evaluator

    def _config(self) -> RunConfig:
        return RunConfig(K=self.K, beta=self.beta, delta=self.delta, theta=self.theta,
                         zeta=self.zeta, metric=self.metric, epsilon=self.epsilon,
                         t_max=self.t_max, iterations=self.iterations,
                         frozen_ambiguity=self.frozen_ambiguity, seed=self.seed,
                         evaluator=self.evaluator)

    def fit(self, scenario, y=None):
        result = run_iterations(self._config(), scenario, keep_safe_sets=True)
        self.scenario_ = scenario
        self.config_ = result.config
        self.records_ = result.records
        self.safe_set_ = result.safe_sets[-1]
        self.n_samples_ = result.records[-1].n_samples if result.records else result.config.n0
        self.ambiguity_ = result.ambiguity[-1] if result.ambiguity else None
        self.costs_ = np.array([r.cost for r in result.records])
        return self

    def predict(self, X):
        """First MPC input for each row of ``X``; rows where the OCP is infeasible get NaN."""
        check_is_fitted(self, "safe_set_")
        sc = self.scenario_
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != sc.dynamics.n_x:
            raise ValueError(f"expected {sc.dynamics.n_x} state columns, got {X.shape[1]}")
        cfg = self.config_
        states, values, _ = self.safe_set_.terminal_candidates()
        amb = self.ambiguity_
        out = np.full((X.shape[0], sc.dynamics.n_u), np.nan)
        for i, x in enumerate(X):
            forms, _ = _pick_forms(sc, np.repeat(x[None], cfg.K, axis=0), amb, cfg.beta)
            p = FiniteHorizonProblem(cfg.K, sc.dynamics, sc.cost, sc.x_lo, sc.x_hi, sc.u_lo, sc.u_hi,
                                     states, values, DRSpec(tuple(forms), amb, cfg.risk))
            try:
                out[i] = solve_fhocp(p, x).inputs[0]
            except OcpInfeasible:
                pass
        return out

    def score(self, scenario=None, y=None):
        """Negative realised cost of the last iteration."""
        check_is_fitted(self, "records_")
        return -float(self.costs_[-1]) if len(self.costs_) else 0.0
