"""
Centralized reference solver for small instances.

The whole fleet is stacked into one QP over ``x = [p_1; q_1; ...; p_N; q_N]``
and handed to the same operator-splitting solver the agents use. Two forms
are available: the inequality form (voltage rows ``sum_n Gamma_n p_n +
Xi_n q_n <= w``) and the slack form, where a non-negative slack turns the
voltage rows into equalities. Both have the same optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverInfeasibleError
from .ev import EvParams, check_feasible, operational_cost
from .grid import Edge, GridSpec
from .harness import build_comm_graph, consensus_residual
from .qp import ConeQP, SolverSettings


@dataclass(eq=False)
class CentralizedProblem:
    """Stacked problem data of a scenario (or of any compatible object).

    Parameters
    ----------
    feasibility : list of EvFeasibility
    Gamma, Xi : list of (2KT, T) arrays
        Coupling blocks per EV.
    w : (2KT,) array
        Voltage headroom.
    """

    feasibility: list
    Gamma: list
    Xi: list
    w: np.ndarray

    @classmethod
    def from_scenario(cls, scenario) -> "CentralizedProblem":
        env = scenario.envelope
        return cls(feasibility=list(scenario.feasibility),
                   Gamma=[env.Gamma(n) for n in range(scenario.N)],
                   Xi=[env.Xi(n) for n in range(scenario.N)],
                   w=np.asarray(env.w, dtype=float))

    @property
    def N(self) -> int:
        return len(self.feasibility)

    @property
    def T(self) -> int:
        return self.feasibility[0].params.T if self.feasibility else 0

    def objective(self, p) -> float:
        return float(sum(operational_cost(p[n], f.params) for n, f in enumerate(self.feasibility)))

    def coupling(self, p, q) -> np.ndarray:
        out = np.zeros_like(self.w)
        for n in range(self.N):
            out += self.Gamma[n] @ p[n] + self.Xi[n] @ q[n]
        return out

    def coupling_violation(self, p, q) -> float:
        return float(max(0.0, (self.coupling(p, q) - self.w).max(initial=0.0)))


@dataclass
class CentralizedSolution:
    p: np.ndarray
    q: np.ndarray
    objective: float
    prim_res: float
    dual_res: float
    status: str
    iterations: int
    slack: np.ndarray | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "solved"


def _ev_rows(feas, T):
    """Constraint rows of one EV over its own ``[p; q]`` and their bounds."""
    prm = feas.params
    eye = np.eye(T)
    zero = np.zeros((T, T))
    box = np.hstack([eye, zero])
    disc = np.zeros((2 * T, 2 * T))
    disc[0::2, :T] = eye
    disc[1::2, T:] = eye
    soc = np.hstack([feas.M, zero])
    demand = np.hstack([np.ones((1, T)), np.zeros((1, T))])
    A = np.vstack([box, disc, soc, demand])
    avail = prm.available
    lower = np.concatenate([np.where(avail, prm.p_min, 0.0), np.full(2 * T, -np.inf),
                            np.full(T, prm.alpha_lo), [prm.demand]])
    upper = np.concatenate([np.where(avail, prm.p_max, 0.0), np.full(2 * T, np.inf),
                            np.full(T, prm.alpha_hi), [np.inf]])
    radius = np.where(avail, feas.s_max, 0.0)
    return A, lower, upper, radius


def _stack(problem: CentralizedProblem, slack: bool):
    N, T = problem.N, problem.T
    m2 = problem.w.shape[0]
    nx = 2 * N * T + (m2 if slack else 0)
    P = np.zeros((nx, nx))
    h = np.zeros(nx)
    blocks, lowers, uppers, radii, discs = [], [], [], [], []
    row = 0
    for n, feas in enumerate(problem.feasibility):
        prm = feas.params
        off = 2 * n * T
        P[off:off + T, off:off + T] = 2.0 * prm.kappa * np.eye(T)
        h[off:off + T] = prm.delta * prm.price
        A_n, lo, hi, rad = _ev_rows(feas, T)
        A = np.zeros((A_n.shape[0], nx))
        A[:, off:off + 2 * T] = A_n
        blocks.append(A)
        lowers.append(lo)
        uppers.append(hi)
        radii.append(rad)
        first = row + T
        discs.append(np.column_stack([first + 2 * np.arange(T), first + 2 * np.arange(T) + 1]))
        row += A_n.shape[0]
    C = np.zeros((m2, nx))
    for n in range(N):
        off = 2 * n * T
        C[:, off:off + T] = problem.Gamma[n]
        C[:, off + T:off + 2 * T] = problem.Xi[n]
    if slack:
        C[:, 2 * N * T:] = np.eye(m2)
        blocks.append(C)
        lowers.append(problem.w)
        uppers.append(problem.w)
        Sb = np.zeros((m2, nx))
        Sb[:, 2 * N * T:] = np.eye(m2)
        blocks.append(Sb)
        lowers.append(np.zeros(m2))
        uppers.append(np.full(m2, np.inf))
    else:
        blocks.append(C)
        lowers.append(np.full(m2, -np.inf))
        uppers.append(problem.w)
    A = np.vstack(blocks)
    return (P, h, A, np.concatenate(lowers), np.concatenate(uppers),
            np.concatenate(radii) if radii else np.zeros(0),
            np.vstack(discs) if discs else np.zeros((0, 2), dtype=int))


def solve_centralized(problem: CentralizedProblem, tol: float = 1e-7, slack_form: bool = False,
                      max_iter: int = 200000) -> CentralizedSolution:
    """Solve the stacked problem to primal/dual residuals below ``tol``.

    Raises
    ------
    SolverInfeasibleError
        With the dual ray (a Farkas-type certificate) as ``report`` when
        the instance has no feasible point.
    """
    N, T = problem.N, problem.T
    P, h, A, lo, hi, rad, discs = _stack(problem, slack_form)
    settings = SolverSettings(eps_abs=tol, eps_rel=tol, max_iter=max_iter,
                              polish="always")
    qp = ConeQP(P, A, discs=discs, h_ref=h, settings=settings)
    res = qp.solve(h, lo, hi, rad)
    if res.status == "primal_infeasible":
        raise SolverInfeasibleError("centralized problem is infeasible", report=res.y)
    x = res.x
    pq = x[:2 * N * T].reshape(N, 2, T)
    p, q = pq[:, 0, :], pq[:, 1, :]
    return CentralizedSolution(
        p=p, q=q, objective=problem.objective(p), prim_res=res.prim_res, dual_res=res.dual_res,
        status=res.status, iterations=res.iterations,
        slack=x[2 * N * T:] if slack_form else None,
    )


@dataclass
class GapReport:
    distributed_objective: float
    centralized_objective: float
    relative_gap: float
    coupling_violation: float
    ev_violation: float
    consensus_residual: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def compare(distributed, centralized: CentralizedSolution, problem: CentralizedProblem,
            graph=None) -> GapReport:
    """Gap between a distributed final point and the centralized optimum.

    ``distributed`` is anything with ``p`` and ``q`` arrays (a RunResult or a
    CentralizedSolution); ``graph`` enables the consensus-residual entry
    for runs that carry ``lam``.
    """
    p, q = np.asarray(distributed.p), np.asarray(distributed.q)
    f_d = problem.objective(p)
    f_c = centralized.objective
    gap = abs(f_d - f_c) / max(abs(f_c), 1e-12)
    ev_viol = max((check_feasible(f, p[n], q[n], tol=0.0).max_violation
                   for n, f in enumerate(problem.feasibility)), default=0.0)
    resid = 0.0
    if graph is not None and getattr(distributed, "lam", None) is not None:
        resid = consensus_residual(np.asarray(distributed.lam), graph)
    return GapReport(distributed_objective=f_d, centralized_objective=f_c, relative_gap=gap,
                     coupling_violation=problem.coupling_violation(p, q), ev_violation=float(ev_viol),
                     consensus_residual=resid)


def synthetic_scenario(N: int = 6, T: int = 8, seed: int = 0, band: float = 0.05,
                       base_kv: float = 0.4, c: float = 100.0, S: int = 200,
                       coupling_scale: float = 300.0, load_kw: float = 45.0,
                       inverter_kva: float = 5.1):
    """A small random three-phase instance (K=3) with a binding voltage band.

    One lateral with three phases feeds everything; base loads peak
    mid-horizon, prices are random, EVs are spread over the phases and talk
    over a complete graph.
    """
    from .scenario import Scenario  # local import: scenario depends on harness

    rng = np.random.default_rng(seed)
    z = {("a", "a"): 0.1313 + 0.3856j, ("b", "b"): 0.1278 + 0.3969j, ("c", "c"): 0.1293 + 0.3920j,
         ("a", "b"): 0.047 + 0.145j, ("b", "a"): 0.047 + 0.145j,
         ("b", "c"): 0.046 + 0.142j, ("c", "b"): 0.046 + 0.142j,
         ("a", "c"): 0.048 + 0.139j, ("c", "a"): 0.048 + 0.139j}
    shape = 0.5 + 0.5 * np.sin(np.linspace(0, np.pi, T))
    p_load = load_kw * shape[:, None] * rng.uniform(0.8, 1.2, size=3)[None, :]
    q_load = 0.33 * p_load
    price = rng.uniform(0.1, 0.4, size=T)
    evs = []
    for n in range(N):
        cap = rng.uniform(20, 40)
        evs.append(EvParams(arrival=0, departure=T, capacity=cap, inverter_kva=inverter_kva,
                            soc_init=0.3 * cap, soc_target=0.5 * cap, soc_min=0.1 * cap,
                            soc_max=0.95 * cap, p_max=5.0, p_min=-5.0, kappa=1e-3,
                            price=price, delta=0.5))
    grid = GridSpec(nodes={0: ("a", "b", "c"), 1: ("a", "b", "c")},
                    edges=[Edge(0, 1, ("a", "b", "c"), z)],
                    customers=[(1, "abc"[n % 3]) for n in range(N)], base_kv=base_kv)
    comm = build_comm_graph("complete", N)
    return Scenario(name=f"synthetic-N{N}-T{T}-s{seed}", grid=grid, T=T, delta=0.5,
                    p_load=p_load, q_load=q_load, band=band, evs=evs, comm=comm,
                    c=c, S=S, coupling_scale=coupling_scale, seed=seed,
                    comm_spec={"kind": "complete", "seed": seed})
