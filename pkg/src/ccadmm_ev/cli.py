"""
Command-line entry point: ``ccadmm-ev run | compare | oracle``.

Exit status is 0 on success, 1 for invalid input (scenario validation,
mismatched result directories) and 2 when a solver reports infeasibility.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import CCAdmmError, MismatchedRunsError, ScenarioValidationError, SolverInfeasibleError

log = logging.getLogger("ccadmm_ev")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2
ORACLE_MAX_N = 30


def _overrides(args) -> dict:
    return {"S": args.iters, "c": args.stepsize, "gamma": args.gamma,
            "epsilon": args.epsilon, "seed": args.seed}


def cmd_run(args) -> int:
    from .harness import run
    from .scenario import emit_results, parse_scenario

    scn = parse_scenario(args.scenario, _overrides(args))
    mode = "benchmark" if args.benchmark else "censored"
    out = Path(args.out or scn.output.get("directory") or f"results/{scn.name}-{mode}")

    def progress(k, ntx, resid):
        log.info("iteration %d: %d/%d transmitted, consensus residual %.3e", k, ntx, scn.N, resid)

    result = run(scn, mode=mode, progress=progress)
    bench = None
    if args.paired and mode == "censored":
        log.info("running the uncensored benchmark for comparison")
        bench = run(scn, mode="benchmark", progress=progress)
    emit_results(result, out, scenario=scn, benchmark=bench)
    msg = f"{scn.name} [{mode}]: {result.transmissions} transmissions, objective {result.objective:.4f}"
    if bench is not None:
        msg += f", fraction vs benchmark {result.transmissions / bench.transmissions:.3f}"
    print(msg)
    print(f"results written to {out}")
    return EXIT_OK


def _load_run(directory):
    from .scenario import read_bitmap

    d = Path(directory)
    try:
        with open(d / "metrics.json") as fh:
            metrics = json.load(fh)
    except OSError as exc:
        raise ScenarioValidationError([f"cannot read {d / 'metrics.json'}: {exc}"]) from exc
    return metrics, read_bitmap(d)


def cmd_compare(args) -> int:
    ma, ba = _load_run(args.a)
    mb, bb = _load_run(args.b)
    if ma["scenario"] != mb["scenario"] or ba.shape != bb.shape:
        raise MismatchedRunsError(
            f"cannot compare {ma['scenario']} (S x N = {ba.shape}) with {mb['scenario']} (S x N = {bb.shape})")
    ta, tb = int(ba.sum()), int(bb.sum())
    report = {
        "scenario": ma["scenario"],
        "transmissions_a": ta,
        "transmissions_b": tb,
        "fraction_a_over_b": ta / tb if tb else float("nan"),
        "per_iteration_a": ba.sum(axis=1).tolist(),
        "per_iteration_b": bb.sum(axis=1).tolist(),
        "objective_a": ma["objective"],
        "objective_b": mb["objective"],
        "objective_rel_diff": abs(ma["objective"] - mb["objective"]) / max(abs(mb["objective"]), 1e-12),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import CentralizedProblem, solve_centralized
    from .scenario import parse_scenario

    scn = parse_scenario(args.scenario, {"seed": args.seed})
    if scn.N > ORACLE_MAX_N:
        raise ScenarioValidationError(
            [f"oracle is meant for small instances (N <= {ORACLE_MAX_N}); scenario has N={scn.N}"])
    problem = CentralizedProblem.from_scenario(scn)
    sol = solve_centralized(problem, tol=args.tol)
    print(json.dumps({
        "scenario": scn.name, "objective": sol.objective, "status": sol.status,
        "iterations": sol.iterations, "prim_res": sol.prim_res, "dual_res": sol.dual_res,
        "coupling_violation": problem.coupling_violation(sol.p, sol.q),
    }, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccadmm-ev",
                                     description="Communication-censored ADMM for EV charging.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario")
    p_run.add_argument("--scenario", required=True, help="YAML file or bundled name (example1, example2)")
    p_run.add_argument("--benchmark", action="store_true", help="disable censoring")
    p_run.add_argument("--iters", type=int, help="number of ADMM iterations S")
    p_run.add_argument("--stepsize", type=float, help="ADMM step size c")
    p_run.add_argument("--gamma", type=float)
    p_run.add_argument("--epsilon", type=float)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--paired", action="store_true",
                       help="also run the benchmark and report the communication fraction")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare two result directories")
    p_cmp.add_argument("--a", required=True)
    p_cmp.add_argument("--b", required=True)
    p_cmp.set_defaults(func=cmd_compare)

    p_orc = sub.add_parser("oracle", help="centralized solve of a small scenario")
    p_orc.add_argument("--scenario", required=True)
    p_orc.add_argument("--seed", type=int)
    p_orc.add_argument("--tol", type=float, default=1e-7)
    p_orc.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        for err in exc.errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except SolverInfeasibleError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (CCAdmmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
