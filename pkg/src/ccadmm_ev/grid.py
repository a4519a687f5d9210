"""
Unbalanced radial feeder model and the linearised (LinDistFlow) voltage map.

Voltages are squared magnitudes in p.u.^2. Powers are in kW / kVAR and
impedances in ohm; the conversion of ``R @ P`` into p.u.^2 uses the
phase-to-neutral base voltage of the feeder (the base power cancels out of
the per-unit product, so only the base voltage is needed).

Vectors over the horizon are stacked time-major: entry ``t * K + k`` is
supply point ``k`` at time step ``t``. Dense K x K storage is used; the
memory needed by the time-expanded blocks grows like ``K**2 * T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionError, GridSpecError, InvalidQueryError

PHASES = ("a", "b", "c")
PHASE_INDEX = {ph: i for i, ph in enumerate(PHASES)}

# e^{-2 pi i / 3}
OMEGA = np.exp(-2j * np.pi / 3)


@dataclass(frozen=True, eq=False)
class Edge:
    """Line segment ``parent -> child`` with its per-phase-pair impedances.

    ``z`` maps a phase pair such as ``("a", "b")`` to a complex impedance in
    ohm. Pairs that are absent contribute nothing to path sums.
    """

    parent: int
    child: int
    phases: tuple[str, ...]
    z: dict[tuple[str, str], complex]

    def impedance(self, phi: str, psi: str) -> complex:
        if phi not in self.phases or psi not in self.phases:
            return 0j
        return complex(self.z.get((phi, psi), 0j))


SupplyPoint = tuple[int, str]


def supply_points(nodes: dict, root: int = 0) -> list[SupplyPoint]:
    """Ordered set K of (node, phase) over non-root nodes, by node then phase."""
    pts = []
    for node in sorted(nodes):
        if node == root:
            continue
        for ph in sorted(nodes[node], key=lambda p: PHASE_INDEX.get(p, 99)):
            pts.append((node, ph))
    return pts


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Radial feeder: nodes with phase sets, edges, and customer placement.

    Parameters
    ----------
    nodes : dict
        Node id -> tuple of phases present at that node.
    edges : list of Edge
        Each edge points away from the root.
    customers : list of (node, phase)
        Supply point of customer ``n`` (0-based position in the list).
    root : int
        Feeder head; must be three-phase.
    v0 : float
        Squared voltage magnitude at the root (p.u.^2).
    base_kv : float
        Phase-to-neutral base voltage in kV.
    """

    nodes: dict[int, tuple[str, ...]]
    edges: list[Edge]
    customers: list[SupplyPoint]
    root: int = 0
    v0: float = 1.0
    base_kv: float = 0.4

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            raise GridSpecError("; ".join(errors))

    def validation_errors(self) -> list[str]:
        errors = []
        if self.root not in self.nodes:
            return [f"root node {self.root} is not declared"]
        if set(self.nodes[self.root]) != set(PHASES):
            errors.append("root node must be three-phase")
        for node, phases in self.nodes.items():
            bad = [ph for ph in phases if ph not in PHASE_INDEX]
            if bad:
                errors.append(f"node {node} has unknown phases {bad}")
        if self.base_kv <= 0:
            errors.append("base_kv must be positive")
        if self.v0 <= 0:
            errors.append("v0 must be positive")

        parent = {}
        for e in self.edges:
            if e.parent == e.child:
                errors.append(f"self-loop at node {e.parent}")
                continue
            for end in (e.parent, e.child):
                if end not in self.nodes:
                    errors.append(f"edge ({e.parent},{e.child}) references unknown node {end}")
            if e.child in parent:
                errors.append(f"node {e.child} has more than one parent")
            if e.child == self.root:
                errors.append("root node cannot be the child of an edge")
            parent[e.child] = e.parent
            if e.parent in self.nodes and e.child in self.nodes:
                shared = set(self.nodes[e.parent]) & set(self.nodes[e.child])
                if not set(e.phases) <= shared:
                    errors.append(
                        f"edge ({e.parent},{e.child}) phases {e.phases} not shared by both ends"
                    )
        if errors:
            return errors

        # every non-root node must reach the root without revisiting a node
        for node in self.nodes:
            seen = set()
            cur = node
            while cur != self.root:
                if cur in seen or cur not in parent:
                    errors.append(f"node {node} is not connected to the root by a simple path")
                    break
                seen.add(cur)
                cur = parent[cur]

        for n, (node, ph) in enumerate(self.customers):
            if node == self.root or node not in self.nodes or ph not in self.nodes[node]:
                errors.append(f"customer {n} assigned to nonexistent supply point {node}:{ph}")
        return errors

    @cached_property
    def parent(self) -> dict[int, Edge]:
        return {e.child: e for e in self.edges}

    @cached_property
    def supply_points(self) -> list[SupplyPoint]:
        return supply_points(self.nodes, self.root)

    @cached_property
    def supply_index(self) -> dict[SupplyPoint, int]:
        return {sp: k for k, sp in enumerate(self.supply_points)}

    @property
    def K(self) -> int:
        return len(self.supply_points)

    @property
    def N(self) -> int:
        return len(self.customers)

    @property
    def kw_to_pu2(self) -> float:
        """Factor turning ohm * kW into p.u.^2 of squared voltage."""
        return 1e3 / (self.base_kv * 1e3) ** 2

    def path_edges(self, node: int) -> list[Edge]:
        """Edges on the unique path from the root to ``node``."""
        if node not in self.nodes:
            raise InvalidQueryError(f"unknown node {node}")
        out = []
        cur = node
        while cur != self.root:
            e = self.parent[cur]
            out.append(e)
            cur = e.parent
        return out[::-1]


def common_path_impedance(grid: GridSpec, i: int, j: int, phi: str, psi: str) -> complex:
    """Sum of ``z^{uv, phi psi}`` over the edges shared by the root paths to i and j.

    Edges lacking the phase pair contribute zero.
    """
    for node, ph in ((i, phi), (j, psi)):
        if node not in grid.nodes:
            raise InvalidQueryError(f"unknown node {node}")
        if ph not in grid.nodes[node]:
            raise InvalidQueryError(f"phase {ph!r} not present at node {node}")
    pi, pj = grid.path_edges(i), grid.path_edges(j)
    total = 0j
    for ei, ej in zip(pi, pj):
        if ei is not ej:
            break
        total += ei.impedance(phi, psi)
    return total


@dataclass(frozen=True, eq=False)
class SensitivityModel:
    """R, X, Theta and the derived injection-to-voltage blocks.

    ``R`` and ``X`` are in ohm; ``D`` and ``E`` already include the
    kW -> p.u.^2 factor so that ``V(t) = Vtilde(t) + D p(t) + E q(t)``.
    """

    R: np.ndarray
    X: np.ndarray
    theta: np.ndarray
    scale: float
    T: int

    @property
    def K(self) -> int:
        return self.R.shape[0]

    @property
    def N(self) -> int:
        return self.theta.shape[1]

    @cached_property
    def D(self) -> np.ndarray:
        return -self.scale * self.R @ self.theta

    @cached_property
    def E(self) -> np.ndarray:
        return -self.scale * self.X @ self.theta

    def D_n(self, n: int) -> np.ndarray:
        return self.D[:, n]

    def E_n(self, n: int) -> np.ndarray:
        return self.E[:, n]

    def D_bar(self, n: int) -> np.ndarray:
        """Direct sum of T copies of column ``D_n`` (KT x T)."""
        return np.kron(np.eye(self.T), self.D[:, [n]])

    def E_bar(self, n: int) -> np.ndarray:
        return np.kron(np.eye(self.T), self.E[:, [n]])


def build_sensitivity(grid: GridSpec, T: int) -> SensitivityModel:
    pts = grid.supply_points
    K = len(pts)
    R = np.zeros((K, K))
    X = np.zeros((K, K))
    for a, (i, phi) in enumerate(pts):
        for b, (j, psi) in enumerate(pts):
            Z = common_path_impedance(grid, i, j, phi, psi)
            rot = OMEGA ** (PHASE_INDEX[phi] - PHASE_INDEX[psi])
            val = np.conj(Z) * rot
            R[a, b] = 2.0 * val.real
            X[a, b] = -2.0 * val.imag
    theta = np.zeros((K, grid.N))
    for n, sp in enumerate(grid.customers):
        theta[grid.supply_index[sp], n] = 1.0
    return SensitivityModel(R=R, X=X, theta=theta, scale=grid.kw_to_pu2, T=T)


def baseline_voltage(grid: GridSpec, sens: SensitivityModel, p_load, q_load) -> np.ndarray:
    """Squared voltages caused by the non-EV loads alone.

    ``p_load`` and ``q_load`` have shape (T, K): one column per supply point.
    Returns the stacked KT vector.
    """
    p_load = np.asarray(p_load, dtype=float)
    q_load = np.asarray(q_load, dtype=float)
    expected = (sens.T, sens.K)
    if p_load.shape != expected or q_load.shape != expected:
        raise DimensionError(
            f"load series must have shape {expected}, got {p_load.shape} and {q_load.shape}"
        )
    V = grid.v0 - sens.scale * (p_load @ sens.R.T + q_load @ sens.X.T)
    return V.reshape(-1)


def evaluate_voltage(v_base, sens: SensitivityModel, p, q) -> np.ndarray:
    """Stacked squared voltages for EV profiles ``p``, ``q`` of shape (N, T)."""
    v_base = np.asarray(v_base, dtype=float)
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if p.shape != (sens.N, sens.T) or q.shape != (sens.N, sens.T):
        raise DimensionError(f"profiles must have shape {(sens.N, sens.T)}")
    if v_base.shape != (sens.K * sens.T,):
        raise DimensionError(f"baseline must have length {sens.K * sens.T}")
    delta = p.T @ sens.D.T + q.T @ sens.E.T
    return v_base + delta.reshape(-1)


@dataclass(frozen=True, eq=False)
class VoltageEnvelope:
    """Baseline, voltage bounds and the coupling right-hand side ``w``."""

    baseline: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sens: SensitivityModel = field(repr=False)

    def __post_init__(self):
        if np.any(self.lower >= self.upper):
            raise GridSpecError("lower voltage bound must be strictly below the upper bound")

    @cached_property
    def w(self) -> np.ndarray:
        return np.concatenate([self.upper - self.baseline, self.baseline - self.lower])

    def Gamma(self, n: int) -> np.ndarray:
        Db = self.sens.D_bar(n)
        return np.vstack([Db, -Db])

    def Xi(self, n: int) -> np.ndarray:
        Eb = self.sens.E_bar(n)
        return np.vstack([Eb, -Eb])

    def coupling(self, p, q) -> np.ndarray:
        """``sum_n Gamma_n p_n + Xi_n q_n`` evaluated without forming the blocks."""
        g = evaluate_voltage(np.zeros_like(self.baseline), self.sens, p, q)
        return np.concatenate([g, -g])


def voltage_bounds(K: int, T: int, band: float, v0: float = 1.0):
    """Squared-magnitude bounds for a symmetric band around the nominal magnitude."""
    nominal = np.sqrt(v0)
    lo = np.full(K * T, ((1.0 - band) * nominal) ** 2)
    hi = np.full(K * T, ((1.0 + band) * nominal) ** 2)
    return lo, hi


def build_coupling(sens: SensitivityModel, v_base, lower, upper) -> VoltageEnvelope:
    KT = sens.K * sens.T
    arrs = [np.asarray(a, dtype=float) for a in (v_base, lower, upper)]
    if any(a.shape != (KT,) for a in arrs):
        raise DimensionError(f"baseline and bounds must have length {KT}")
    return VoltageEnvelope(baseline=arrs[0], lower=arrs[1], upper=arrs[2], sens=sens)
