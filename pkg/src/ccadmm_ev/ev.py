"""
EV customer model: parameters, feasibility polytope, inverter discs, cost.

Time steps are 1-based in the formulation (t = 1..T) and 0-based in the
arrays here, so step ``t`` lives at index ``t - 1``. An EV is available at
step ``t`` when ``arrival < t <= departure``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DimensionError, InfeasibleParametersError


@dataclass(frozen=True, eq=False)
class EvParams:
    """Design parameters of one EV and the shared tariff it faces.

    SoC values are in kWh, rates in kW, the inverter rating in kVA and the
    price in $/kWh. ``capacity`` is carried for reporting only; no
    constraint uses it.
    """

    arrival: int
    departure: int
    capacity: float
    inverter_kva: float
    soc_init: float
    soc_target: float
    soc_min: float
    soc_max: float
    p_max: float
    p_min: float
    kappa: float
    price: np.ndarray = field(repr=False)
    delta: float = 0.5

    @property
    def T(self) -> int:
        return len(self.price)

    def validation_errors(self) -> list[str]:
        errs = []
        T = self.T
        if not 0 <= self.arrival < self.departure <= T:
            errs.append(f"need 0 <= arrival < departure <= T, got {self.arrival}, {self.departure}, T={T}")
        if not self.p_min <= 0 <= self.p_max:
            errs.append(f"need p_min <= 0 <= p_max, got {self.p_min}, {self.p_max}")
        if not self.soc_min <= self.soc_init <= self.soc_max:
            errs.append("initial SoC outside [soc_min, soc_max]")
        if not self.soc_min <= self.soc_target <= self.soc_max:
            errs.append("target SoC outside [soc_min, soc_max]")
        if self.inverter_kva < 0:
            errs.append("inverter rating must be non-negative")
        if self.kappa < 0:
            errs.append("kappa must be non-negative")
        if self.delta <= 0:
            errs.append("interval length must be positive")
        reach = self.soc_init + self.delta * (self.departure - self.arrival) * self.p_max
        if self.soc_target > reach + 1e-12:
            errs.append(
                f"target SoC {self.soc_target:g} unreachable before departure (max {reach:g})"
            )
        return errs

    @property
    def alpha_lo(self) -> float:
        return (self.soc_min - self.soc_init) / self.delta

    @property
    def alpha_hi(self) -> float:
        return (self.soc_max - self.soc_init) / self.delta

    @property
    def demand(self) -> float:
        return (self.soc_target - self.soc_init) / self.delta

    @property
    def available(self) -> np.ndarray:
        steps = np.arange(1, self.T + 1)
        return (steps > self.arrival) & (steps <= self.departure)


def cumsum_matrix(T: int) -> np.ndarray:
    """Lower-triangular all-ones matrix M with ``M @ p == cumsum(p)``."""
    return np.tril(np.ones((T, T)))


@dataclass(frozen=True, eq=False)
class EvFeasibility:
    """``F [p; q] >= f`` plus ``p(t)^2 + q(t)^2 <= s_max^2`` for every t.

    Row blocks of ``F``, in order: p >= p_min, -p >= -p_max, Mp >= alpha_lo,
    -Mp >= -alpha_hi, 1'p >= e, (I-L)p >= 0, (L-I)p >= 0, (I-L)q >= 0,
    (L-I)q >= 0. That is 8T + 1 rows.
    """

    params: EvParams = field(repr=False)
    F: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    L: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)

    @property
    def s_max(self) -> float:
        return self.params.inverter_kva

    @cached_property
    def row_blocks(self) -> list[tuple[str, int, int]]:
        T = self.params.T
        names = ["p_min", "p_max", "soc_min", "soc_max", "demand",
                 "avail_p_lo", "avail_p_hi", "avail_q_lo", "avail_q_hi"]
        sizes = [T, T, T, T, 1, T, T, T, T]
        out, start = [], 0
        for name, size in zip(names, sizes):
            out.append((name, start, start + size))
            start += size
        return out

    def block_of(self, row: int) -> str:
        for name, lo, hi in self.row_blocks:
            if lo <= row < hi:
                return name
        raise IndexError(row)


def build_feasibility(params: EvParams, T: int | None = None) -> EvFeasibility:
    T = params.T if T is None else T
    if T != params.T:
        raise DimensionError(f"price profile has length {params.T}, expected {T}")
    errs = params.validation_errors()
    if errs:
        raise InfeasibleParametersError("; ".join(errs))

    I = np.eye(T)
    Z = np.zeros((T, T))
    M = cumsum_matrix(T)
    L = np.diag(params.available.astype(float))
    ones = np.ones((1, T))
    F = np.block([
        [I, Z],
        [-I, Z],
        [M, Z],
        [-M, Z],
        [ones, np.zeros((1, T))],
        [I - L, Z],
        [L - I, Z],
        [Z, I - L],
        [Z, L - I],
    ])
    f = np.concatenate([
        np.full(T, params.p_min),
        np.full(T, -params.p_max),
        np.full(T, params.alpha_lo),
        np.full(T, -params.alpha_hi),
        [params.demand],
        np.zeros(4 * T),
    ])
    return EvFeasibility(params=params, F=F, f=f, L=L, M=M)


@dataclass
class FeasibilityReport:
    """Rows of ``F [p; q] >= f`` and time steps of the disc constraint that fail."""

    violated_rows: list[int]
    row_blocks: list[str]
    disc_violations: list[int]
    max_violation: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violated_rows and not self.disc_violations

    def __str__(self):
        if self.ok:
            return "feasible"
        parts = []
        if self.violated_rows:
            blocks = sorted(set(self.row_blocks))
            parts.append(f"{len(self.violated_rows)} linear rows violated ({', '.join(blocks)})")
        if self.disc_violations:
            parts.append(f"inverter limit exceeded at steps {self.disc_violations}")
        return "; ".join(parts) + f" (max violation {self.max_violation:.3g})"


def check_feasible(feas: EvFeasibility, p, q, tol: float = 1e-6) -> FeasibilityReport:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    T = feas.params.T
    if p.shape != (T,) or q.shape != (T,):
        raise DimensionError(f"profiles must have length {T}")
    gap = feas.f - feas.F @ np.concatenate([p, q])
    rows = np.flatnonzero(gap > tol)
    # apparent power in kVA, so ``tol`` means the same thing as for the kW rows
    disc_gap = np.hypot(p, q) - feas.s_max
    steps = np.flatnonzero(disc_gap > tol)
    worst = max([0.0, *gap[rows], *disc_gap[steps]])
    return FeasibilityReport(
        violated_rows=rows.tolist(),
        row_blocks=[feas.block_of(r) for r in rows],
        disc_violations=steps.tolist(),
        max_violation=float(worst),
    )


def operational_cost(p, params: EvParams) -> float:
    """Energy cost ``delta * price' p`` plus the ``kappa * p'p`` cycling penalty."""
    p = np.asarray(p, dtype=float)
    return float(params.delta * params.price @ p + params.kappa * p @ p)


def soc_profile(p, params: EvParams) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return params.soc_init + params.delta * np.cumsum(p)
