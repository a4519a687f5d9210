"""
Communication-censored ADMM agent.

An iteration of one agent has two phases, separated by a barrier in the
synchronous simulator:

1. :func:`compute_step` solves the local problem, compares the new
   ``lambda`` with the last broadcast value and decides whether to transmit.
2. :func:`absorb_step` stores whatever neighbours broadcast in the same
   round and updates the local dual variable.

The split exists because the inbox of round ``k`` is produced by the
neighbours' own phase 1 of round ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .subproblem import update_dual


@dataclass(frozen=True)
class CensorPolicy:
    """Transmit only when ``||xi|| >= gamma * epsilon**k``."""

    gamma: float = 1.0
    epsilon: float = 0.9
    enabled: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")

    def threshold(self, k: int) -> float:
        return self.gamma * self.epsilon**k

    def H(self, k: int, xi) -> float:
        return float(np.linalg.norm(xi)) - self.threshold(k)


def censor_decision(xi, k: int, policy: CensorPolicy) -> bool:
    """True when the agent should broadcast at iteration ``k`` (k >= 1)."""
    if not policy.enabled:
        return True
    return policy.H(k, xi) >= 0.0


@dataclass(frozen=True)
class Message:
    sender: int
    k: int
    payload: np.ndarray = field(repr=False)


@dataclass
class AgentState:
    """Local variables of one agent.

    ``lam_hat`` is this agent's last broadcast and ``neighbor_hat[m]`` the
    last value received from neighbour ``m``.
    """

    agent_id: int
    neighbors: tuple[int, ...]
    lam: np.ndarray
    nu: np.ndarray
    lam_hat: np.ndarray
    neighbor_hat: dict[int, np.ndarray]
    k: int = 0
    u: np.ndarray | None = None
    warm: object = None
    solver_converged: bool = True
    inner_iterations: int = 0
    transmitted: bool = False

    @classmethod
    def initial(cls, agent_id: int, neighbors, dim: int) -> "AgentState":
        neighbors = tuple(sorted(neighbors))
        return cls(
            agent_id=agent_id,
            neighbors=neighbors,
            lam=np.zeros(dim),
            nu=np.zeros(dim),
            lam_hat=np.zeros(dim),
            neighbor_hat={m: np.zeros(dim) for m in neighbors},
        )

    def neighbor_stack(self):
        return [self.neighbor_hat[m] for m in self.neighbors]


@dataclass
class AgentContext:
    """What an agent needs besides its own state.

    ``problem`` must provide ``local_update(nu, lam_hat_self, lam_hat_nbrs,
    warm)`` returning an object with ``lam``, ``u``, ``converged``,
    ``iterations`` and ``warm`` attributes.
    """

    problem: object
    policy: CensorPolicy
    c: float


def compute_step(state: AgentState, ctx: AgentContext) -> Message | None:
    """Phase 1 of iteration ``state.k + 1``: local update and censoring."""
    k = state.k + 1
    upd = ctx.problem.local_update(state.nu, state.lam_hat, state.neighbor_stack(),
                                   warm=state.warm)
    state.lam = upd.lam
    state.u = upd.u
    state.warm = upd.warm
    state.solver_converged = upd.converged
    state.inner_iterations = upd.iterations

    xi = state.lam_hat - upd.lam
    state.transmitted = censor_decision(xi, k, ctx.policy)
    if state.transmitted:
        state.lam_hat = upd.lam.copy()
        return Message(sender=state.agent_id, k=k, payload=state.lam_hat)
    return None


def absorb_step(state: AgentState, inbox, ctx: AgentContext) -> AgentState:
    """Phase 2: take in this round's messages, update the dual, advance ``k``."""
    k = state.k + 1
    for msg in sorted(inbox, key=lambda m: m.sender):
        if msg.k != k:
            raise ValueError(f"agent {state.agent_id} got a round-{msg.k} message in round {k}")
        if msg.sender not in state.neighbor_hat:
            raise ValueError(f"agent {state.agent_id} got a message from non-neighbour {msg.sender}")
        state.neighbor_hat[msg.sender] = msg.payload
    state.nu = update_dual(state.nu, ctx.c, state.lam_hat, state.neighbor_stack())
    state.k = k
    return state


def agent_step(state: AgentState, ctx: AgentContext, exchange):
    """Run both phases for a single agent.

    ``exchange`` is called with the outbound message (or None) and must
    return this round's inbox. Simulators that run many agents call the two
    phases directly instead.
    """
    out = compute_step(state, ctx)
    inbox = exchange(out)
    absorb_step(state, inbox, ctx)
    return state, out
