"""
Synchronous multi-agent driver for the censored ADMM protocol.

Every round, all agents run their compute phase, the transport delivers the
broadcasts (inboxes ordered by sender id), then all agents run their absorb
phase. Agents therefore never see a value from the round they are in before
the barrier, and the run is reproducible bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import DisconnectedGraphError, IsolatedAgentError, MismatchedRunsError, SolverInfeasibleError
from .ev import FeasibilityReport, check_feasible, operational_cost
from .grid import evaluate_voltage
from .protocol import AgentContext, AgentState, CensorPolicy, Message, absorb_step, compute_step
from .subproblem import LocalProblem


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Undirected communication graph; ``neighbors[u]`` is sorted."""

    N: int
    neighbors: tuple[tuple[int, ...], ...]
    kind: str = "explicit"

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.N) for v in self.neighbors[u] if u < v]

    def degree(self, u: int) -> int:
        return len(self.neighbors[u])

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.N, self.N), dtype=bool)
        for u, nbrs in enumerate(self.neighbors):
            A[u, list(nbrs)] = True
        return A

    def is_connected(self) -> bool:
        if self.N == 0:
            return False
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.N


def _from_edges(N: int, edges, kind: str) -> CommGraph:
    nbrs = [set() for _ in range(N)]
    for u, v in edges:
        if u == v:
            raise ValueError(f"self-edge at {u}")
        if not (0 <= u < N and 0 <= v < N):
            raise ValueError(f"edge ({u},{v}) outside 0..{N - 1}")
        nbrs[u].add(v)
        nbrs[v].add(u)
    return CommGraph(N=N, neighbors=tuple(tuple(sorted(s)) for s in nbrs), kind=kind)


def build_comm_graph(kind: str, N: int, degree: int | None = None, seed: int | None = None,
                     edges=None) -> CommGraph:
    """Build a connected communication graph.

    ``kind`` is ``"complete"``, ``"regular"`` (uniform random d-regular graph;
    redrawn with successive seeds until connected, at most 50 attempts) or
    ``"explicit"`` (``edges`` given).
    """
    if N < 2:
        raise IsolatedAgentError("a connected communication graph needs at least two agents")
    if kind == "complete":
        graph = _from_edges(N, ((u, v) for u in range(N) for v in range(u + 1, N)), kind)
    elif kind == "regular":
        if degree is None or not 0 < degree < N or (N * degree) % 2:
            raise ValueError(f"no {degree}-regular graph on {N} vertices")
        base = 0 if seed is None else int(seed)
        for attempt in range(50):
            g = nx.random_regular_graph(degree, N, seed=base + attempt)
            if nx.is_connected(g):
                break
        graph = _from_edges(N, g.edges(), kind)
    elif kind == "explicit":
        graph = _from_edges(N, edges or [], kind)
    else:
        raise ValueError(f"unknown graph kind {kind!r}")
    if not graph.is_connected():
        raise DisconnectedGraphError(f"{kind} communication graph on {N} agents is not connected")
    return graph


class InMemoryTransport:
    """Lossless synchronous broadcast to graph neighbours."""

    def deliver(self, outbound: dict[int, Message], graph: CommGraph) -> list[list[Message]]:
        inboxes = [[] for _ in range(graph.N)]
        for sender in sorted(outbound):
            msg = outbound[sender]
            for v in graph.neighbors[sender]:
                inboxes[v].append(msg)
        return inboxes


@dataclass
class RunResult:
    """Everything recorded by one simulated run.

    ``bitmap[k-1, n]`` is True when agent ``n`` broadcast at iteration ``k``.
    ``residuals[k-1]`` is ``max over graph edges ||lambda_u - lambda_v||`` at
    iteration ``k``.
    """

    scenario: str
    mode: str
    S: int
    c: float
    bitmap: np.ndarray
    residuals: np.ndarray
    p: np.ndarray
    q: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    voltages: np.ndarray
    objective: float
    inner_iterations: np.ndarray
    solver_converged: np.ndarray
    wall_time: float = 0.0
    history: dict | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.bitmap.shape[1]

    @property
    def transmissions(self) -> int:
        return int(self.bitmap.sum())

    @property
    def per_iteration(self) -> np.ndarray:
        return self.bitmap.sum(axis=1)

    @property
    def density(self) -> float:
        return self.transmissions / self.bitmap.size


def consensus_residual(lam: np.ndarray, graph: CommGraph) -> float:
    sq = np.einsum("ij,ij->i", lam, lam)
    G = lam @ lam.T
    dist2 = sq[:, None] + sq[None, :] - 2.0 * G
    A = graph.adjacency()
    if not A.any():
        return 0.0
    # the Gram form loses precision near zero; recompute the worst pair directly
    u, v = np.unravel_index(np.argmax(np.where(A, dist2, -np.inf)), dist2.shape)
    return float(np.linalg.norm(lam[u] - lam[v]))


def build_agents(scenario, c: float):
    """Local problems for every EV in ``scenario``.

    The coupling rows are multiplied by ``scenario.coupling_scale``. This
    leaves the feasible set and the primal optimum unchanged and only
    rescales the multipliers, i.e. it fixes the unit in which the step size
    ``c`` is measured. Agents whose QPs have identical data share one
    factorisation.
    """
    env = scenario.envelope
    graph = scenario.comm
    sc = getattr(scenario, "coupling_scale", 1.0)
    w = sc * env.w
    cache = {}
    problems = []
    for n, feas in enumerate(scenario.feasibility):
        problems.append(LocalProblem(
            feas, sc * env.Gamma(n), sc * env.Xi(n), w,
            n_agents=scenario.N, n_neighbors=graph.degree(n), c=c,
            settings=scenario.solver, qp_cache=cache,
        ))
    return problems


def run(scenario, mode: str = "censored", S: int | None = None, c: float | None = None,
        record_history: bool = False, transport=None, progress=None) -> RunResult:
    """Drive ``S`` synchronous rounds of all agents.

    ``mode="benchmark"`` disables censoring, which is the uncensored
    decentralized ADMM. Raises :class:`SolverInfeasibleError` naming the
    agent when a local feasibility set turns out to be empty.
    """
    if mode not in ("censored", "benchmark"):
        raise ValueError(f"mode must be 'censored' or 'benchmark', got {mode!r}")
    S = scenario.S if S is None else int(S)
    c = scenario.c if c is None else float(c)
    graph = scenario.comm
    N = scenario.N
    if graph.N != N:
        raise ValueError("communication graph size does not match the number of EVs")
    if N < 2:
        raise IsolatedAgentError("at least two agents are required")
    policy = scenario.policy
    if mode == "benchmark":
        policy = CensorPolicy(policy.gamma, policy.epsilon, enabled=False)
    transport = transport or InMemoryTransport()

    t0 = time.perf_counter()
    problems = build_agents(scenario, c)
    dim = scenario.envelope.w.shape[0]
    states = [AgentState.initial(n, graph.neighbors[n], dim) for n in range(N)]
    ctxs = [AgentContext(problem=pb, policy=policy, c=c) for pb in problems]

    bitmap = np.zeros((S, N), dtype=bool)
    residuals = np.zeros(S)
    inner = np.zeros((S, N), dtype=int)
    conv = np.ones((S, N), dtype=bool)
    hist = None
    if record_history:
        hist = {key: [] for key in ("lam", "nu", "lam_hat", "u")}

    for k in range(1, S + 1):
        outbound = {}
        for n in range(N):
            try:
                msg = compute_step(states[n], ctxs[n])
            except SolverInfeasibleError as exc:
                raise SolverInfeasibleError(f"agent {n}: {exc}", agent=n, report=exc.report) from exc
            if msg is not None:
                outbound[n] = msg
            bitmap[k - 1, n] = msg is not None
            inner[k - 1, n] = states[n].inner_iterations
            conv[k - 1, n] = states[n].solver_converged
        inboxes = transport.deliver(outbound, graph)
        for n in range(N):
            absorb_step(states[n], inboxes[n], ctxs[n])

        lam = np.array([st.lam for st in states])
        residuals[k - 1] = consensus_residual(lam, graph)
        if hist is not None:
            hist["lam"].append(lam.copy())
            hist["nu"].append(np.array([st.nu for st in states]))
            hist["lam_hat"].append(np.array([st.lam_hat for st in states]))
            hist["u"].append(np.array([st.u for st in states]))
        if progress is not None:
            progress(k, bitmap[k - 1].sum(), residuals[k - 1])

    T = scenario.T
    U = np.array([st.u for st in states])
    p, q, s = U[:, :T], U[:, T:2 * T], U[:, 2 * T:]
    V = evaluate_voltage(scenario.envelope.baseline, scenario.sensitivity, p, q)
    objective = sum(operational_cost(p[n], scenario.evs[n]) for n in range(N))
    if hist is not None:
        hist = {key: np.array(val) for key, val in hist.items()}
    return RunResult(
        scenario=scenario.name, mode=mode, S=S, c=c, bitmap=bitmap, residuals=residuals,
        p=p, q=q, s=s, lam=np.array([st.lam for st in states]), voltages=V,
        objective=float(objective), inner_iterations=inner, solver_converged=conv,
        wall_time=time.perf_counter() - t0, history=hist,
    )


def communication_fraction(censored: RunResult, benchmark: RunResult) -> float:
    """Censored transmissions divided by benchmark transmissions."""
    if (censored.scenario != benchmark.scenario or censored.S != benchmark.S
            or censored.N != benchmark.N):
        raise MismatchedRunsError("runs differ in scenario, iteration count or agent count")
    return censored.transmissions / benchmark.transmissions


@dataclass
class Solution:
    voltages: np.ndarray
    slack: np.ndarray
    coupling_violation: float
    ev_reports: list[FeasibilityReport]
    objective: float

    @property
    def feasible(self) -> bool:
        return all(r.ok for r in self.ev_reports)


FEASIBILITY_TOL = 1e-4


def reconstruct_solution(result: RunResult, scenario, tol: float = FEASIBILITY_TOL) -> Solution:
    """Voltages, coupling slack, per-EV feasibility and total cost of a finished run.

    ``tol`` is the slack allowed in the EV constraints; the default matches
    the accuracy of the inner solver (relative 1e-6 of the largest row).
    """
    env = scenario.envelope
    V = evaluate_voltage(env.baseline, scenario.sensitivity, result.p, result.q)
    slack = env.w - env.coupling(result.p, result.q)
    reports = [check_feasible(f, result.p[n], result.q[n], tol=tol)
               for n, f in enumerate(scenario.feasibility)]
    objective = sum(operational_cost(result.p[n], scenario.evs[n]) for n in range(scenario.N))
    return Solution(voltages=V, slack=slack, coupling_violation=float(max(0.0, -slack.min(initial=0.0))),
                    ev_reports=reports, objective=float(objective))
