"""Shared builders for small feeders and EVs used across the test modules."""

import numpy as np
import pytest

from ccadmm_ev.ev import EvParams
from ccadmm_ev.grid import Edge, GridSpec

ABC = ("a", "b", "c")

# self impedances of the reference lateral (ohm)
Z_AA = 0.1313 + 0.3856j
Z_BB = 0.1278 + 0.3969j
Z_CC = 0.1293 + 0.3920j


def lateral_z(mutual=True):
    z = {("a", "a"): Z_AA, ("b", "b"): Z_BB, ("c", "c"): Z_CC}
    if mutual:
        z.update({("a", "b"): 0.047 + 0.145j, ("b", "a"): 0.047 + 0.145j,
                  ("b", "c"): 0.046 + 0.142j, ("c", "b"): 0.046 + 0.142j,
                  ("a", "c"): 0.048 + 0.139j, ("c", "a"): 0.048 + 0.139j})
    return z


def two_node_grid(customers=((1, "a"),), mutual=True, base_kv=0.4):
    return GridSpec(nodes={0: ABC, 1: ABC}, edges=[Edge(0, 1, ABC, lateral_z(mutual))],
                    customers=list(customers), base_kv=base_kv)


def chain_grid(n_edges=3, z=0.2 + 0.4j, customers=((1, "a"),)):
    nodes = {i: ABC for i in range(n_edges + 1)}
    zz = {(ph, ph): z for ph in ABC}
    edges = [Edge(i, i + 1, ABC, zz) for i in range(n_edges)]
    return GridSpec(nodes=nodes, edges=edges, customers=list(customers))


def make_ev(T=4, **kw):
    base = dict(arrival=0, departure=T, capacity=40.0, inverter_kva=12.0, soc_init=10.0,
                soc_target=12.0, soc_min=4.0, soc_max=38.0, p_max=7.0, p_min=-7.0,
                kappa=1e-4, price=np.full(T, 0.2), delta=0.5)
    base.update(kw)
    if np.isscalar(base["price"]):
        base["price"] = np.full(T, float(base["price"]))
    return EvParams(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance criteria verdicts, one line each."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, text = results[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {text}")
