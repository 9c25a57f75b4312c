"""Command-line entry point: ``drilmpc {run,sweep,verify-reform,check-conditions}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .mpc_loop import (RecursiveFeasibilityError, RunConfig, StepCapError, run_iterations,
                       write_iteration_csv, write_iteration_table, write_summary)
from .ocp import check_q_conditions
from .reform import reformulation_errors
from .scenarios import (IntegratorScenario, OneStepScenario, ScenarioConfigError, TwoRobotConfig,
                        TwoRobotScenario)

log = logging.getLogger("drilmpc")

SWEEP_THETAS = (5e-4, 0.05, 0.1, 0.2)
REFORM_TOL = 1e-6
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    name = os.environ.get("DR_ILMPC_LOG", "error").strip().lower()
    if name not in _LEVELS:
        print(f"warning: DR_ILMPC_LOG={name!r} not in {sorted(_LEVELS)}; using error",
              file=sys.stderr)
        name = "error"
    logging.basicConfig(level=_LEVELS[name], format="%(levelname)s %(name)s: %(message)s")


def _scenario(name: str, config: str | None):
    if name == "two-robot":
        return TwoRobotScenario(TwoRobotConfig.from_file(config) if config else None)
    if config:
        raise ScenarioConfigError("--config only applies to the two-robot scenario")
    return {"integrator": IntegratorScenario, "one-step": OneStepScenario}[name]()


def _run_config(args, theta) -> RunConfig:
    return RunConfig(theta=theta, zeta=args.zeta, metric=args.metric, epsilon=args.epsilon,
                     t_max=args.tmax, iterations=args.iters, frozen_ambiguity=args.frozen_ambiguity,
                     seed=args.seed, strict=not args.exploratory)


def _write_run(result, scenario, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for rec in result.records:
        write_iteration_csv(rec, scenario, out / f"iteration_{rec.iteration:03d}.csv")
    write_iteration_table(result.records, out / "iterations.csv")
    write_summary(result, out / "summary.json", {"scenario": scenario.name})


def _one_run(job):
    # top-level so sweep workers can pickle it
    scenario_name, config, cfg, out = job
    scenario = _scenario(scenario_name, config)
    result = run_iterations(cfg, scenario)
    _write_run(result, scenario, Path(out))
    last = result.records[-1] if result.records else None
    return {"theta": cfg.theta, "seed": cfg.seed,
            "final_min_clearance": None if last is None else last.metrics.get("min_clearance"),
            "collision_iterations": sum(bool(r.metrics.get("collision")) for r in result.records),
            "costs": [r.cost for r in result.records]}


def cmd_run(args) -> int:
    theta = args.theta if args.zeta is None else None
    scenario = _scenario(args.scenario, args.config)
    cfg = _run_config(args, theta)
    result = run_iterations(cfg, scenario)
    _write_run(result, scenario, Path(args.out))
    for r in result.records:
        print(f"iteration {r.iteration:3d}  T={r.T:3d}  cost={r.cost:.6f}  {r.termination.value}")
    print(f"wrote {len(result.records)} iteration files and summary.json to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    thetas = [float(t) for t in args.thetas.split(",")] if args.thetas else list(SWEEP_THETAS)
    base = Path(args.out)
    jobs = [(args.scenario, args.config, _run_config(args, th), str(base / f"theta_{th:g}_seed_{args.seed}"))
            for th in thetas]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_one_run, jobs))
    else:
        rows = [_one_run(j) for j in jobs]
    rows.sort(key=lambda r: (r["theta"], r["seed"]))
    clear = [r["final_min_clearance"] for r in rows]
    coll = [r["collision_iterations"] for r in rows]
    trends = {}
    if all(c is not None for c in clear):  # scenarios without an obstacle report no clearance
        trends = {"clearance_nondecreasing": bool(all(b >= a for a, b in zip(clear, clear[1:]))),
                  "collisions_nonincreasing": bool(all(b <= a for a, b in zip(coll, coll[1:])))}
    base.mkdir(parents=True, exist_ok=True)
    (base / "sweep.json").write_text(json.dumps({"runs": rows, "trends": trends}, indent=2))
    for r in rows:
        c = r["final_min_clearance"]
        print(f"theta={r['theta']:<8g} final clearance={'n/a' if c is None else f'{c:.4f}'}  "
              f"collision iterations={r['collision_iterations']}")
    print(" ".join(f"{k}={v}" for k, v in trends.items()))
    return 0


def cmd_verify_reform(args) -> int:
    errs = reformulation_errors(args.instances, args.seed)
    worst = max(errs.values())
    for metric, e in errs.items():
        print(f"{metric}: max |dual - oracle| = {e:.3e} over {args.instances} instances")
    print(f"max |dual - oracle| = {worst:.3e}")
    if worst > REFORM_TOL:
        print(f"error: exceeds {REFORM_TOL:g}", file=sys.stderr)
        return 1
    return 0


def cmd_check_conditions(args) -> int:
    res = check_q_conditions(args.c1, args.c2, args.c3, args.a1, args.a2, args.a3, args.diam_u)
    print("(a) holds" if res.holds_a else "(a) fails")
    print("(b) holds" if res.holds_b else "(b) fails")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drilmpc",
                                description="Iterative risk-constrained MPC with data-driven ambiguity sets.")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp):
        sp.add_argument("--scenario", choices=["two-robot", "integrator", "one-step"], default="two-robot")
        sp.add_argument("--config", help="key=value scenario file (two-robot only)")
        sp.add_argument("--metric", choices=["tv", "wasserstein"], default="tv")
        sp.add_argument("--zeta", type=float, help="confidence level; replaces the fixed radius")
        sp.add_argument("--iters", type=int, default=None, help="iterations (scenario default if unset)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--frozen-ambiguity", action="store_true")
        sp.add_argument("--epsilon", type=float, default=1e-3)
        sp.add_argument("--tmax", type=int, default=200)
        sp.add_argument("--exploratory", action="store_true", help="record step-cap hits instead of failing")
        sp.add_argument("--out", default="out")

    r = sub.add_parser("run", help="run one scenario")
    run_flags(r)
    r.add_argument("--theta", type=float, default=0.05)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run one scenario for several radii")
    run_flags(s)
    s.add_argument("--thetas", help="comma-separated radii (default 5e-4,0.05,0.1,0.2)")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify-reform", help="compare the dual LPs with brute-force oracles")
    v.add_argument("--instances", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify_reform)

    c = sub.add_parser("check-conditions", help="arithmetic conditions for a local cost bound")
    for name in ("c1", "c2", "c3", "a1", "a2", "a3"):
        c.add_argument(f"--{name}", type=float, required=True)
    c.add_argument("--diam-u", type=float, default=np.inf, help="diameter of the input set")
    c.set_defaults(func=cmd_check_conditions)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if getattr(args, "zeta", None) is not None and args.metric != "tv":
        print("error: --zeta is only available with --metric tv", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (RecursiveFeasibilityError, StepCapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ScenarioConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
