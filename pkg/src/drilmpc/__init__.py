"""Iterative MPC with distributionally robust CVaR constraints learned from data."""

from .mpc_loop import (IterationRecord, IterativeDRMPC, RecursiveFeasibilityError, RunConfig,
                       RunResult, StepCapError, Termination, assert_lyapunov_decrease,
                       check_visited_safety, dr_mpc, run_iterations)
from .numerics import (AdmmSettings, LinearProgram, QuadraticProgram, SolveStatus, Status, solve_lp,
                       solve_qp, solve_qp_dense)
from .ocp import (DRSpec, FiniteHorizonProblem, LinearDynamics, OcpInfeasible, OcpSolution,
                  StageCost, check_q_conditions, solve_fhocp)
from .reform import (ConstraintAtomValues, DualBlock, emit_dual_block, eval_worst_case_cvar_dual,
                     risk_cut)
from .risk import (AmbiguitySet, DiscreteDistribution, Metric, RiskSpec, cvar, tv_distance,
                   tv_radius_for_confidence, var, wasserstein_distance, worst_case_cvar,
                   worst_case_cvar_tv_oracle, worst_case_cvar_w1_oracle)
from .safe_set import SafeEntry, SafeSet, append_trajectory, cost_to_go, prune_unsafe
from .scenarios import (BetaBinomialSampler, IntegratorScenario, OneStepScenario, TwoRobotConfig,
                        TwoRobotScenario, min_clearance)

__version__ = "0.1.0"
