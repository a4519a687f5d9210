"""
Scenario files, run orchestration helpers and result serialisation.

A scenario is a YAML document; see ``docs/scenario_schema.md`` for the
full schema. :func:`parse_scenario` validates everything it can before
raising, so a broken file reports all of its problems at once.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import DisconnectedGraphError, GridSpecError, ScenarioValidationError
from .ev import EvParams, build_feasibility
from .grid import (PHASE_INDEX, Edge, GridSpec, baseline_voltage, build_coupling,
                   build_sensitivity, voltage_bounds)
from .grid import supply_points as grid_supply_points
from .harness import CommGraph, RunResult, build_comm_graph
from .protocol import CensorPolicy
from .qp import SolverSettings

BUNDLED = ("example1", "example2")
ARTIFACTS = ("voltages", "comm_bitmap", "metrics", "profiles")

# impedances printed for the two-node circuit, checked against the bundled data
REFERENCE_IMPEDANCES = {
    ("a", "a"): 0.1313 + 0.3856j,
    ("b", "b"): 0.1278 + 0.3969j,
    ("c", "c"): 0.1293 + 0.3920j,
}

EV_FIELDS = ("arrival", "departure", "capacity", "inverter_kva", "soc_init", "soc_target",
             "soc_min", "soc_max", "p_max", "p_min", "kappa")


@dataclass(eq=False)
class Scenario:
    """A fully resolved problem instance: feeder, loads, EVs, graph, algorithm."""

    name: str
    grid: GridSpec
    T: int
    delta: float
    p_load: np.ndarray
    q_load: np.ndarray
    band: float
    evs: list[EvParams]
    comm: CommGraph
    policy: CensorPolicy = field(default_factory=CensorPolicy)
    c: float = 100.0
    S: int = 30
    coupling_scale: float = 1.0
    solver: SolverSettings = field(default_factory=SolverSettings)
    seed: int | None = None
    comm_spec: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.evs)

    @property
    def K(self) -> int:
        return self.grid.K

    @cached_property
    def sensitivity(self):
        return build_sensitivity(self.grid, self.T)

    @cached_property
    def envelope(self):
        sens = self.sensitivity
        vb = baseline_voltage(self.grid, sens, self.p_load, self.q_load)
        lo, hi = voltage_bounds(self.K, self.T, self.band, self.grid.v0)
        return build_coupling(sens, vb, lo, hi)

    @cached_property
    def feasibility(self):
        return [build_feasibility(ev, self.T) for ev in self.evs]

    @property
    def price(self) -> np.ndarray:
        return self.evs[0].price if self.evs else np.zeros(self.T)


# ---------------------------------------------------------------------------
# parsing

def _sp_key(text):
    node, _, ph = str(text).partition(":")
    return int(node), ph.strip()


def _sp_text(sp):
    return f"{sp[0]}:{sp[1]}"


def _series(value, T, label, errors):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape != (T,):
        errors.append(f"{label}: expected {T} values, got {arr.size}")
        return np.zeros(T)
    return arr


def _uniform(rng, spec):
    lo, hi = (spec, spec) if np.isscalar(spec) else spec
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def random_evs(spec: dict, defaults: dict, supply_points, rng) -> list[tuple[tuple, dict]]:
    """Draw EV parameters uniformly within the configured ranges.

    SoC ranges are fractions of the drawn battery capacity. Draws that
    would violate ``soc_min <= soc_init, soc_target <= soc_max`` are
    clipped into range.
    """
    out = []
    counts = spec.get("counts", {})
    for sp in supply_points:
        for _ in range(int(counts.get(_sp_text(sp), 0))):
            cap = _uniform(rng, spec.get("capacity", [30.0, 60.0]))
            lo = _uniform(rng, spec.get("soc_min", 0.1)) * cap
            hi = _uniform(rng, spec.get("soc_max", 0.95)) * cap
            init = float(np.clip(_uniform(rng, spec.get("soc_init", [0.3, 0.5])) * cap, lo, hi))
            target = float(np.clip(_uniform(rng, spec.get("soc_target", [0.7, 0.9])) * cap, lo, hi))
            params = dict(defaults)
            params.update(capacity=cap, soc_min=lo, soc_max=hi, soc_init=init, soc_target=target)
            out.append((sp, params))
    return out


def scenario_from_dict(doc: dict, overrides: dict | None = None) -> Scenario:
    """Build and validate a scenario from a parsed YAML document."""
    doc = dict(doc)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    errors: list[str] = []

    def section(name):
        val = doc.get(name)
        if not isinstance(val, dict):
            errors.append(f"missing section '{name}'")
            return {}
        return val

    name = str(doc.get("name", "scenario"))
    seed = overrides.get("seed", doc.get("seed"))
    horizon = section("horizon")
    grid_d = section("grid")
    loads_d = section("loads")
    ev_d = section("ev")
    comm_d = section("comm")
    alg_d = section("algorithm")
    T = int(horizon.get("T", 0))
    delta = float(horizon.get("delta", 0.0))
    if T <= 0:
        errors.append("horizon.T must be a positive integer")
    if delta <= 0:
        errors.append("horizon.delta must be positive")
    if errors:
        raise ScenarioValidationError(errors)

    # grid ---------------------------------------------------------------
    nodes = {int(k): tuple(v) for k, v in grid_d.get("nodes", {}).items()}
    edges = []
    for i, e in enumerate(grid_d.get("edges", [])):
        try:
            phases = tuple(e.get("phases", nodes.get(int(e["to"]), ())))
            z = {}
            for pair, val in e.get("z", {}).items():
                if len(pair) != 2 or any(ph not in PHASE_INDEX for ph in pair):
                    errors.append(f"edge {i}: bad phase pair {pair!r}")
                    continue
                z[(pair[0], pair[1])] = complex(val[0], val[1])
            edges.append(Edge(parent=int(e["from"]), child=int(e["to"]), phases=phases, z=z))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            errors.append(f"edge {i}: {exc!r}")
    band = float(grid_d.get("band", 0.05))
    if not 0 < band < 1:
        errors.append(f"grid.band must lie in (0, 1), got {band}")

    # EVs ----------------------------------------------------------------
    prices = doc.get("prices")
    if prices is None:
        errors.append("missing 'prices'")
        price = np.zeros(T)
    else:
        price = _series(prices, T, "prices", errors)

    supply_points = grid_supply_points(nodes, int(grid_d.get("root", 0)))

    defaults = dict(ev_d.get("defaults", {}))
    ev_rng, graph_seed = _split_seed(seed)
    entries = []
    for i, ev in enumerate(ev_d.get("explicit", []) or []):
        params = dict(defaults)
        params.update({k: v for k, v in ev.items() if k != "supply_point"})
        if "supply_point" not in ev:
            errors.append(f"ev.explicit[{i}]: missing supply_point")
            continue
        entries.append((_sp_key(ev["supply_point"]), params))
    if ev_d.get("random"):
        entries.extend(random_evs(ev_d["random"], defaults, supply_points, ev_rng))

    evs, customers = [], []
    for n, (sp, params) in enumerate(entries):
        missing = [f for f in EV_FIELDS if f not in params]
        if missing:
            errors.append(f"EV {n}: missing fields {missing}")
            continue
        try:
            evp = EvParams(**{f: (int(params[f]) if f in ("arrival", "departure") else float(params[f]))
                              for f in EV_FIELDS}, price=price, delta=delta)
        except (TypeError, ValueError) as exc:
            errors.append(f"EV {n}: {exc}")
            continue
        errors.extend(f"EV {n}: {msg}" for msg in evp.validation_errors())
        evs.append(evp)
        customers.append(sp)

    grid = None
    try:
        grid = GridSpec(nodes=nodes, edges=edges, customers=customers,
                        root=int(grid_d.get("root", 0)), v0=float(grid_d.get("v0", 1.0)),
                        base_kv=float(grid_d.get("base_kv", 0.4)))
    except GridSpecError as exc:
        errors.extend(str(exc).split("; "))

    # loads --------------------------------------------------------------
    K = len(supply_points)
    index = {sp: k for k, sp in enumerate(supply_points)}
    p_load = np.zeros((T, K))
    q_load = np.zeros((T, K))
    mode = loads_d.get("mode", "supply_point")
    for key, target in (("p", p_load), ("q", q_load)):
        for label, values in (loads_d.get(key) or {}).items():
            series = _series(values, T, f"loads.{key}[{label}]", errors)
            if mode == "supply_point":
                sp = _sp_key(label)
                if sp not in index:
                    errors.append(f"loads.{key}: unknown supply point {label}")
                    continue
                target[:, index[sp]] += series
            elif mode == "customer":
                n = int(label)
                if not 0 <= n < len(customers) or customers[n] not in index:
                    errors.append(f"loads.{key}: unknown customer {label}")
                    continue
                target[:, index[customers[n]]] += series
            else:
                errors.append(f"loads.mode must be 'supply_point' or 'customer', got {mode!r}")
                break

    # communication --------------------------------------------------------
    comm = None
    comm_spec = {"kind": comm_d.get("kind", "complete")}
    if "degree" in comm_d:
        comm_spec["degree"] = int(comm_d["degree"])
    comm_spec["seed"] = int(comm_d["seed"]) if "seed" in comm_d and "seed" not in overrides else graph_seed
    if comm_spec["kind"] == "explicit":
        comm_spec["edges"] = [list(map(int, e)) for e in comm_d.get("edges", [])]
    try:
        comm = build_comm_graph(comm_spec["kind"], len(evs), degree=comm_spec.get("degree"),
                                seed=comm_spec["seed"], edges=comm_spec.get("edges"))
    except (DisconnectedGraphError, ValueError) as exc:
        errors.append(f"comm: {exc}")

    # algorithm ------------------------------------------------------------
    policy = None
    gamma = float(overrides.get("gamma", alg_d.get("gamma", 1.0)))
    epsilon = float(overrides.get("epsilon", alg_d.get("epsilon", 0.9)))
    censoring = bool(alg_d.get("censoring", True))
    try:
        policy = CensorPolicy(gamma=gamma, epsilon=epsilon, enabled=censoring)
    except ValueError as exc:
        errors.append(f"algorithm: {exc}")
    c = float(overrides.get("c", alg_d.get("c", 100.0)))
    S = int(overrides.get("S", alg_d.get("S", 30)))
    if c <= 0:
        errors.append("algorithm.c must be positive")
    if S < 1:
        errors.append("algorithm.S must be at least 1")
    coupling_scale = float(alg_d.get("coupling_scale", 1.0))
    if not coupling_scale > 0:
        errors.append("algorithm.coupling_scale must be positive")
    try:
        solver = SolverSettings(**(alg_d.get("solver") or {}))
    except (TypeError, ValueError) as exc:
        errors.append(f"algorithm.solver: {exc}")
        solver = SolverSettings()

    if errors:
        raise ScenarioValidationError(errors)
    return Scenario(name=name, grid=grid, T=T, delta=delta, p_load=p_load, q_load=q_load,
                    band=band, evs=evs, comm=comm, policy=policy, c=c, S=S, coupling_scale=coupling_scale,
                    solver=solver,
                    seed=seed, comm_spec=comm_spec, output=dict(doc.get("output") or {}))


def _split_seed(seed):
    """Independent generators for EV draws and for the graph, from one seed."""
    ss = np.random.SeedSequence(seed)
    ev_ss, graph_ss = ss.spawn(2)
    return np.random.default_rng(ev_ss), int(graph_ss.generate_state(1)[0])


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("ccadmm_ev") / "data" / f"{name}.yaml"))


def parse_scenario(path, overrides: dict | None = None) -> Scenario:
    """Read a scenario from ``path`` (or a bundled scenario name)."""
    path = str(path)
    if not os.path.exists(path) and path in BUNDLED:
        path = bundled_path(path)
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ScenarioValidationError([f"cannot read scenario: {exc}"]) from exc
    except yaml.YAMLError as exc:
        raise ScenarioValidationError([f"malformed YAML: {exc}"]) from exc
    if not isinstance(doc, dict):
        raise ScenarioValidationError(["scenario file must contain a mapping"])
    scn = scenario_from_dict(doc, overrides)
    if scn.name in BUNDLED:
        check_reference_impedances(scn.grid)
    return scn


def check_reference_impedances(grid: GridSpec):
    """The bundled two-node circuit must carry the three published self-impedances."""
    edge = grid.parent.get(1)
    bad = [pair for pair, z in REFERENCE_IMPEDANCES.items()
           if edge is None or abs(edge.impedance(*pair) - z) > 1e-9]
    if bad:
        raise ScenarioValidationError([f"edge (0,1) impedance {''.join(p)} differs from reference"
                                       for p in bad])


# ---------------------------------------------------------------------------
# writing

def scenario_to_dict(scn: Scenario) -> dict:
    """Resolved scenario with every EV listed explicitly (used for the echo file)."""
    grid = scn.grid
    pts = grid.supply_points
    evs = []
    for sp, ev in zip(grid.customers, scn.evs):
        item = {"supply_point": _sp_text(sp)}
        for f in EV_FIELDS:
            val = getattr(ev, f)
            item[f] = int(val) if f in ("arrival", "departure") else float(val)
        evs.append(item)
    return {
        "name": scn.name,
        "seed": scn.seed,
        "horizon": {"T": scn.T, "delta": scn.delta},
        "grid": {
            "root": grid.root,
            "v0": grid.v0,
            "base_kv": grid.base_kv,
            "band": scn.band,
            "nodes": {n: list(ph) for n, ph in grid.nodes.items()},
            "edges": [{"from": e.parent, "to": e.child, "phases": list(e.phases),
                       "z": {a + b: [z.real, z.imag] for (a, b), z in e.z.items()}}
                      for e in grid.edges],
        },
        "loads": {
            "mode": "supply_point",
            "p": {_sp_text(sp): scn.p_load[:, k].tolist() for k, sp in enumerate(pts)},
            "q": {_sp_text(sp): scn.q_load[:, k].tolist() for k, sp in enumerate(pts)},
        },
        "prices": scn.price.tolist(),
        "ev": {"explicit": evs},
        "comm": dict(scn.comm_spec),
        "algorithm": {
            "c": scn.c, "S": scn.S, "gamma": scn.policy.gamma, "epsilon": scn.policy.epsilon,
            "censoring": scn.policy.enabled, "coupling_scale": scn.coupling_scale,
            "solver": {k: getattr(scn.solver, k) for k in
                       ("eps_abs", "eps_rel", "max_iter", "warm_start")},
        },
        "output": dict(scn.output),
    }


def dump_scenario(scn: Scenario, path):
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(scn), fh, sort_keys=False)


def metrics_dict(result: RunResult, scenario: Scenario | None = None,
                 benchmark: RunResult | None = None) -> dict:
    vmag = np.sqrt(np.maximum(result.voltages, 0.0))
    out = {
        "scenario": result.scenario,
        "mode": result.mode,
        "N": result.N,
        "S": result.S,
        "c": result.c,
        "transmissions": result.transmissions,
        "density": result.density,
        "per_iteration_transmissions": result.per_iteration.tolist(),
        "objective": result.objective,
        "consensus_residuals": result.residuals.tolist(),
        "voltage_min_pu": float(vmag.min()),
        "voltage_max_pu": float(vmag.max()),
        "inner_iterations_total": int(result.inner_iterations.sum()),
        "inner_nonconverged": int((~result.solver_converged).sum()),
        "wall_time": result.wall_time,
    }
    if scenario is not None:
        env = scenario.envelope
        slack = env.w - env.coupling(result.p, result.q)
        out["coupling_violation"] = float(max(0.0, -slack.min()))
    if benchmark is not None:
        from .harness import communication_fraction
        out["benchmark_transmissions"] = benchmark.transmissions
        out["fraction_vs_benchmark"] = communication_fraction(result, benchmark)
        out["benchmark_objective"] = benchmark.objective
    return out


def emit_results(result: RunResult, directory, scenario: Scenario | None = None,
                 benchmark: RunResult | None = None, artifacts=ARTIFACTS) -> list[Path]:
    """Write CSV/JSON artefacts of a run into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    T = result.p.shape[1]
    if "voltages" in artifacts:
        if scenario is not None:
            labels = [_sp_text(sp) for sp in scenario.grid.supply_points]
        else:
            labels = [f"k{k}" for k in range(result.voltages.size // T)]
        K = len(labels)
        vmag = np.sqrt(np.maximum(result.voltages.reshape(T, K), 0.0))
        path = d / "voltages.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *labels])
            for t in range(T):
                w.writerow([t + 1, *(repr(float(v)) for v in vmag[t])])
        written.append(path)
    if "comm_bitmap" in artifacts:
        path = d / "comm_bitmap.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"ev{n}" for n in range(result.N)])
            for row in result.bitmap.astype(int):
                w.writerow(row.tolist())
        written.append(path)
    if "profiles" in artifacts:
        path = d / "profiles.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *(f"p{n}" for n in range(result.N)), *(f"q{n}" for n in range(result.N))])
            for t in range(T):
                w.writerow([t + 1, *(repr(float(v)) for v in result.p[:, t]),
                            *(repr(float(v)) for v in result.q[:, t])])
        written.append(path)
    if "metrics" in artifacts:
        path = d / "metrics.json"
        with open(path, "w") as fh:
            json.dump(metrics_dict(result, scenario, benchmark), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    if scenario is not None:
        path = d / "scenario.yaml"
        dump_scenario(scenario, path)
        written.append(path)
    return written


def read_bitmap(directory) -> np.ndarray:
    with open(Path(directory) / "comm_bitmap.csv") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[int(v) for v in r] for r in rows], dtype=bool)
