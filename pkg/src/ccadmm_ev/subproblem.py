"""
Per-agent local problem of the dual consensus ADMM.

Each iteration an agent solves::

    u = argmin_{u in U_n}  Omega_n(p) + ||y(u)||^2 / (4 c |N_n|)
    y(u) = Psi_n u - w/N - nu + c * sum_m (lamhat_n + lamhat_m)

and then sets ``lambda = y(u) / (2 c |N_n|)``. Here ``u = [p; q; s]``,
``Psi_n = [Gamma_n  Xi_n  I]`` and ``U_n`` is the EV feasibility set times
the non-negative orthant for the slack ``s``. The dual function of the
local problem is never evaluated on its own; the split above is all the
protocol needs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, IsolatedAgentError, SolverInfeasibleError
from .ev import EvFeasibility, check_feasible
from .qp import ConeQP, QPResult, SolverSettings


@dataclass
class LocalUpdate:
    lam: np.ndarray
    u: np.ndarray
    converged: bool
    iterations: int
    warm: QPResult | None = None


class LocalProblem:
    """The u-update QP of one EV, with its factorisation cached across iterations.

    Parameters
    ----------
    feas : EvFeasibility
        The EV's constraint set.
    Gamma, Xi : (2KT, T) arrays
        Coupling blocks of this EV.
    w : (2KT,) array
        Voltage headroom shared by all agents.
    n_agents : int
        Total number of agents N (the share of ``w`` is ``w / N``).
    n_neighbors : int
        ``|N_n|`` in the communication graph.
    c : float
        ADMM step size.
    qp_cache : dict, optional
        Shared between problems so that agents with identical QP data
        (same coupling columns, kappa, prices and degree) reuse one
        equilibration and factorisation.
    """

    def __init__(self, feas: EvFeasibility, Gamma, Xi, w, n_agents: int, n_neighbors: int,
                 c: float, settings: SolverSettings | None = None, qp_cache: dict | None = None):
        if n_neighbors < 1:
            raise IsolatedAgentError("agent has no neighbours; the communication graph must be connected")
        if c <= 0:
            raise ValueError("step size c must be positive")
        self.feas = feas
        self.params = feas.params
        self.Gamma = np.asarray(Gamma, dtype=float)
        self.Xi = np.asarray(Xi, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.n_agents = n_agents
        self.n_neighbors = n_neighbors
        self.c = float(c)
        self.settings = settings or SolverSettings()

        T = self.params.T
        m2 = self.w.shape[0]
        if self.Gamma.shape != (m2, T) or self.Xi.shape != (m2, T):
            raise DimensionError(f"coupling blocks must have shape {(m2, T)}")
        self.T, self.dim = T, m2
        self.Psi = np.hstack([self.Gamma, self.Xi, np.eye(m2)])
        self.nu_dim = 2 * T + m2
        self._qp = None
        self._qp_cache = qp_cache

    # -- pieces of the objective -------------------------------------------

    @property
    def weight(self) -> float:
        """Coefficient ``1 / (4 c |N_n|)`` of the squared-norm term."""
        return 1.0 / (4.0 * self.c * self.n_neighbors)

    def split(self, u):
        T = self.T
        return u[:T], u[T:2 * T], u[2 * T:]

    def offset(self, nu, lam_hat_self, lam_hat_nbrs):
        """``b`` such that ``y(u) = Psi u - b``."""
        nbr_sum = np.sum(lam_hat_nbrs, axis=0) if len(lam_hat_nbrs) else np.zeros(self.dim)
        return (self.w / self.n_agents + nu
                - self.c * (len(lam_hat_nbrs) * lam_hat_self + nbr_sum))

    def objective(self, u, b) -> float:
        p = u[:self.T]
        prm = self.params
        r = self.Psi @ u - b
        return float(prm.delta * prm.price @ p + prm.kappa * p @ p + self.weight * r @ r)

    def gradient(self, u, b) -> np.ndarray:
        p = u[:self.T]
        prm = self.params
        g = 2.0 * self.weight * self.Psi.T @ (self.Psi @ u - b)
        g[:self.T] += prm.delta * prm.price + 2.0 * prm.kappa * p
        return g

    # -- the QP ------------------------------------------------------------

    def _build(self):
        T, m2 = self.T, self.dim
        prm = self.params
        n = 2 * T + m2
        P = 2.0 * self.weight * self.Psi.T @ self.Psi
        P[:T, :T] += 2.0 * prm.kappa * np.eye(T)

        rows = []
        rows.append(np.hstack([np.eye(T), np.zeros((T, n - T))]))          # p box
        disc = np.zeros((2 * T, n))
        disc[0::2, :T] = np.eye(T)
        disc[1::2, T:2 * T] = np.eye(T)
        rows.append(disc)                                                  # (p_t, q_t) discs
        rows.append(np.hstack([self.feas.M, np.zeros((T, n - T))]))        # SoC
        rows.append(np.hstack([np.ones((1, T)), np.zeros((1, n - T))]))    # demand
        rows.append(np.hstack([np.zeros((m2, 2 * T)), np.eye(m2)]))        # slack >= 0
        A = np.vstack(rows)
        discs = np.column_stack([T + 2 * np.arange(T), T + 2 * np.arange(T) + 1])

        avail = prm.available
        inf = np.inf
        lower = np.concatenate([
            np.where(avail, prm.p_min, 0.0),
            np.full(2 * T, -inf),
            np.full(T, prm.alpha_lo),
            [prm.demand],
            np.zeros(m2),
        ])
        upper = np.concatenate([
            np.where(avail, prm.p_max, 0.0),
            np.full(2 * T, inf),
            np.full(T, prm.alpha_hi),
            [inf],
            np.full(m2, inf),
        ])
        radius = np.where(avail, self.feas.s_max, 0.0)
        h_ref = np.concatenate([prm.delta * prm.price, np.zeros(n - T)])
        self._bounds = (lower, upper, radius)
        key = None
        if self._qp_cache is not None:
            key = (P.tobytes(), self.feas.M.tobytes(), h_ref.tobytes(), id(self.settings))
            if key in self._qp_cache:
                self._qp = self._qp_cache[key]
                return
        self._qp = ConeQP(P, A, discs=discs, h_ref=h_ref, settings=self.settings)
        if key is not None:
            self._qp_cache[key] = self._qp

    def linear_term(self, b) -> np.ndarray:
        h = -2.0 * self.weight * self.Psi.T @ b
        h[:self.T] += self.params.delta * self.params.price
        return h

    def solve_u(self, nu, lam_hat_self, lam_hat_nbrs, warm: QPResult | None = None) -> QPResult:
        if self._qp is None:
            self._build()
        b = self.offset(nu, lam_hat_self, lam_hat_nbrs)
        lower, upper, radius = self._bounds
        res = self._qp.solve(self.linear_term(b), lower, upper, radius, warm=warm)
        if res.status == "primal_infeasible":
            p, q, _ = self.split(res.x)
            raise SolverInfeasibleError(
                "local feasibility set is empty", report=check_feasible(self.feas, p, q)
            )
        return res

    def assemble_y(self, u, nu, lam_hat_self, lam_hat_nbrs) -> np.ndarray:
        return self.Psi @ u - self.offset(nu, lam_hat_self, lam_hat_nbrs)

    def update_lambda(self, u, nu, lam_hat_self, lam_hat_nbrs) -> np.ndarray:
        y = self.assemble_y(u, nu, lam_hat_self, lam_hat_nbrs)
        return y / (2.0 * self.c * self.n_neighbors)

    def local_update(self, nu, lam_hat_self, lam_hat_nbrs, warm=None) -> LocalUpdate:
        """u-update followed by the closed-form lambda-update."""
        res = self.solve_u(nu, lam_hat_self, lam_hat_nbrs, warm=warm)
        lam = self.update_lambda(res.x, nu, lam_hat_self, lam_hat_nbrs)
        return LocalUpdate(lam=lam, u=res.x, converged=res.converged,
                           iterations=res.iterations, warm=res)


def assemble_y(u, problem: LocalProblem, nu_prev, lam_hat_self_prev, lam_hat_nbrs_prev):
    return problem.assemble_y(u, nu_prev, lam_hat_self_prev, lam_hat_nbrs_prev)


def solve_u(problem: LocalProblem, nu_prev, lam_hat_self_prev, lam_hat_nbrs_prev, warm=None):
    return problem.solve_u(nu_prev, lam_hat_self_prev, lam_hat_nbrs_prev, warm=warm)


def update_lambda(u, problem: LocalProblem, nu_prev, lam_hat_self_prev, lam_hat_nbrs_prev):
    return problem.update_lambda(u, nu_prev, lam_hat_self_prev, lam_hat_nbrs_prev)


def update_dual(nu_prev, c: float, lam_hat_self, lam_hat_nbrs) -> np.ndarray:
    """``nu + c * sum_m (lamhat_n - lamhat_m)`` using the states of this round."""
    nu_prev = np.asarray(nu_prev, dtype=float)
    if len(lam_hat_nbrs) == 0:
        return nu_prev.copy()
    diff = len(lam_hat_nbrs) * np.asarray(lam_hat_self) - np.sum(lam_hat_nbrs, axis=0)
    return nu_prev + c * diff
