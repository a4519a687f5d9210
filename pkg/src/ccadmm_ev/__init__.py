"""
Communication-censored decentralized ADMM for coordinating EV charging on an
unbalanced three-phase feeder.

Modules
-------
grid        feeder model and linearized voltage map
ev          EV parameters, feasibility polytope, cost
qp          operator-splitting QP solver with box and disc constraints
subproblem  per-agent local update of the dual consensus ADMM
protocol    censoring rule and agent state machine
harness     communication graphs and the synchronous multi-agent driver
oracle      centralized reference solver
scenario    YAML scenarios and result files
cli         ``ccadmm-ev`` command line
"""

from .errors import (
    CCAdmmError, DimensionError, DisconnectedGraphError, GridSpecError, InfeasibleParametersError,
    InvalidQueryError, IsolatedAgentError, MismatchedRunsError, ScenarioValidationError,
    SolverInfeasibleError,
)
from .ev import EvFeasibility, EvParams, build_feasibility, check_feasible, operational_cost, soc_profile
from .grid import (
    Edge, GridSpec, baseline_voltage, build_coupling, build_sensitivity, common_path_impedance,
    evaluate_voltage, voltage_bounds,
)
from .harness import (
    CommGraph, RunResult, build_comm_graph, communication_fraction, reconstruct_solution, run,
)
from .oracle import CentralizedProblem, compare, solve_centralized, synthetic_scenario
from .protocol import AgentState, CensorPolicy, agent_step, censor_decision
from .qp import ConeQP, SolverSettings
from .scenario import Scenario, emit_results, parse_scenario
from .subproblem import LocalProblem

__version__ = "0.1.0"

__all__ = [
    "AgentState", "CCAdmmError", "CensorPolicy", "CentralizedProblem", "CommGraph", "ConeQP",
    "DimensionError", "DisconnectedGraphError", "Edge", "EvFeasibility", "EvParams", "GridSpec",
    "GridSpecError", "InfeasibleParametersError", "InvalidQueryError", "IsolatedAgentError",
    "LocalProblem", "MismatchedRunsError", "RunResult", "Scenario", "ScenarioValidationError",
    "SolverInfeasibleError", "SolverSettings", "agent_step", "baseline_voltage", "build_comm_graph",
    "build_coupling", "build_feasibility", "build_sensitivity", "censor_decision", "check_feasible",
    "common_path_impedance", "communication_fraction", "compare", "emit_results", "evaluate_voltage",
    "operational_cost", "parse_scenario", "reconstruct_solution", "run", "soc_profile",
    "solve_centralized", "synthetic_scenario", "voltage_bounds",
]
