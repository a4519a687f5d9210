"""Feeder model: path impedances, R/X assembly, baseline and voltage map."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccadmm_ev.errors import DimensionError, GridSpecError, InvalidQueryError
from ccadmm_ev.grid import (
    OMEGA, Edge, GridSpec, baseline_voltage, build_coupling, build_sensitivity,
    common_path_impedance, evaluate_voltage, voltage_bounds,
)

from conftest import ABC, Z_AA, chain_grid, two_node_grid


# ---------------------------------------------------------------------------
# common_path_impedance

def test_reference_lateral_self_impedance():
    grid = two_node_grid()
    assert common_path_impedance(grid, 1, 1, "a", "a") == pytest.approx(0.1313 + 0.3856j)


def test_disjoint_laterals_share_nothing():
    z = {(ph, ph): 0.3 + 0.1j for ph in ABC}
    grid = GridSpec(nodes={0: ABC, 1: ABC, 2: ABC},
                    edges=[Edge(0, 1, ABC, z), Edge(0, 2, ABC, z)], customers=[])
    assert common_path_impedance(grid, 1, 2, "a", "a") == 0


def test_chain_counts_shared_edges_only():
    z = 0.2 + 0.4j
    grid = chain_grid(3, z)
    # root->1->2 is shared by the paths to nodes 3 and 2
    assert common_path_impedance(grid, 3, 2, "b", "b") == pytest.approx(2 * z)
    assert common_path_impedance(grid, 3, 3, "b", "b") == pytest.approx(3 * z)


def test_missing_phase_pair_contributes_zero():
    grid = two_node_grid(mutual=False)
    assert common_path_impedance(grid, 1, 1, "a", "b") == 0


@pytest.mark.parametrize("args", [(1, 7, "a", "a"), (1, 1, "a", "x")])
def test_unknown_node_or_phase(args):
    with pytest.raises(InvalidQueryError):
        common_path_impedance(two_node_grid(), *args)


def test_phase_absent_at_node_is_invalid():
    grid = GridSpec(nodes={0: ABC, 1: ("a",)}, edges=[Edge(0, 1, ("a",), {("a", "a"): 1j})],
                    customers=[])
    with pytest.raises(InvalidQueryError):
        common_path_impedance(grid, 1, 1, "b", "b")


# ---------------------------------------------------------------------------
# GridSpec validation

def test_cycle_rejected():
    z = {("a", "a"): 1j}
    with pytest.raises(GridSpecError):
        GridSpec(nodes={0: ABC, 1: ABC, 2: ABC},
                 edges=[Edge(0, 1, ABC, z), Edge(1, 2, ABC, z), Edge(2, 1, ABC, z)], customers=[])


def test_edge_phases_must_exist_at_both_ends():
    with pytest.raises(GridSpecError):
        GridSpec(nodes={0: ABC, 1: ("a",)}, edges=[Edge(0, 1, ("a", "b"), {})], customers=[])


def test_customer_on_missing_supply_point():
    with pytest.raises(GridSpecError):
        GridSpec(nodes={0: ABC, 1: ("a",)}, edges=[Edge(0, 1, ("a",), {})], customers=[(1, "c")])


# ---------------------------------------------------------------------------
# build_sensitivity

def test_same_phase_diagonal_is_twice_impedance():
    sens = build_sensitivity(two_node_grid(), T=2)
    assert sens.R[0, 0] == pytest.approx(2 * Z_AA.real)
    assert sens.X[0, 0] == pytest.approx(2 * Z_AA.imag)


def test_no_mutual_term_gives_zero_off_diagonal():
    sens = build_sensitivity(two_node_grid(mutual=False), T=2)
    off = ~np.eye(3, dtype=bool)
    assert np.all(sens.R[off] == 0) and np.all(sens.X[off] == 0)


def test_cross_phase_entry_by_complex_arithmetic():
    z = {("a", "b"): 0.1 + 0.2j}
    grid = GridSpec(nodes={0: ABC, 1: ABC}, edges=[Edge(0, 1, ABC, z)], customers=[])
    sens = build_sensitivity(grid, T=1)
    # a -> 0, b -> 1, so the exponent of omega is -1
    ref = np.conj(0.1 + 0.2j) * np.exp(-2j * np.pi / 3) ** (-1)
    assert sens.R[0, 1] == pytest.approx(2 * ref.real, abs=1e-15)
    assert sens.X[0, 1] == pytest.approx(-2 * ref.imag, abs=1e-15)
    assert OMEGA == pytest.approx(np.exp(-2j * np.pi / 3))


def test_theta_structure():
    custs = [(1, "a"), (1, "a"), (1, "c"), (1, "b"), (1, "a")]
    sens = build_sensitivity(two_node_grid(customers=custs), T=3)
    assert np.all(sens.theta.sum(axis=0) == 1)
    assert sens.theta.sum(axis=1).tolist() == [3, 1, 1]
    assert sens.theta.sum() == len(custs)


def test_diagonal_positive_along_resistive_path():
    sens = build_sensitivity(chain_grid(3, customers=[(3, "a")]), T=1)
    assert np.all(np.diag(sens.R) > 0)


def test_time_expanded_blocks_are_direct_sums():
    sens = build_sensitivity(two_node_grid(customers=[(1, "b")]), T=4)
    Db = sens.D_bar(0)
    assert Db.shape == (3 * 4, 4)
    for t in range(4):
        np.testing.assert_array_equal(Db[3 * t:3 * t + 3, t], sens.D_n(0))
        Db[3 * t:3 * t + 3, t] = 0
    assert not Db.any()


# ---------------------------------------------------------------------------
# baseline / evaluate_voltage

def test_zero_load_baseline_is_nominal():
    grid = two_node_grid()
    sens = build_sensitivity(grid, T=5)
    vb = baseline_voltage(grid, sens, np.zeros((5, 3)), np.zeros((5, 3)))
    np.testing.assert_array_equal(vb, np.full(15, grid.v0))


def test_single_kw_on_phase_a():
    grid = two_node_grid(mutual=False, base_kv=0.4)
    sens = build_sensitivity(grid, T=1)
    p = np.array([[1.0, 0.0, 0.0]])
    vb = baseline_voltage(grid, sens, p, np.zeros((1, 3)))
    scale = 1e3 / 400.0**2
    assert vb[0] == pytest.approx(1.0 - 2 * Z_AA.real * scale)
    assert vb[1] == vb[2] == 1.0


def test_baseline_dimension_mismatch():
    grid = two_node_grid()
    sens = build_sensitivity(grid, T=4)
    with pytest.raises(DimensionError):
        baseline_voltage(grid, sens, np.zeros((3, 3)), np.zeros((4, 3)))


def test_zero_profiles_leave_baseline():
    grid = two_node_grid(customers=[(1, "a"), (1, "b")])
    sens = build_sensitivity(grid, T=3)
    vb = np.linspace(0.9, 1.1, 9)
    np.testing.assert_array_equal(evaluate_voltage(vb, sens, np.zeros((2, 3)), np.zeros((2, 3))), vb)


def test_charging_depresses_own_phase():
    grid = two_node_grid(customers=[(1, "a")])
    sens = build_sensitivity(grid, T=2)
    vb = np.ones(6)
    V = evaluate_voltage(vb, sens, np.array([[7.0, 0.0]]), np.zeros((1, 2)))
    assert V[0] < vb[0]
    np.testing.assert_array_equal(V[3:], vb[3:])


def test_evaluate_voltage_shape_check():
    sens = build_sensitivity(two_node_grid(), T=2)
    with pytest.raises(DimensionError):
        evaluate_voltage(np.ones(6), sens, np.zeros((2, 2)), np.zeros((2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_superposition_and_slope(seed):
    rng = np.random.default_rng(seed)
    custs = [(1, "abc"[i]) for i in rng.integers(0, 3, size=4)]
    sens = build_sensitivity(two_node_grid(customers=custs), T=3)
    vb = rng.uniform(0.9, 1.1, 9)
    p1, p2 = rng.normal(size=(2, 4, 3))
    q0 = np.zeros((4, 3))
    lhs = evaluate_voltage(vb, sens, p1 + p2, q0) - vb
    rhs = (evaluate_voltage(vb, sens, p1, q0) - vb) + (evaluate_voltage(vb, sens, p2, q0) - vb)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)
    # unit step in q_n(t) moves V by exactly the matching column of E_bar
    n, t = int(rng.integers(4)), int(rng.integers(3))
    dq = np.zeros((4, 3))
    dq[n, t] = 1.0
    slope = evaluate_voltage(vb, sens, p1, dq) - evaluate_voltage(vb, sens, p1, q0)
    np.testing.assert_allclose(slope, sens.E_bar(n)[:, t], atol=1e-13)


# ---------------------------------------------------------------------------
# coupling

def _envelope(T=4, custs=((1, "a"), (1, "c")), baseline=None, mutual=True):
    grid = two_node_grid(customers=custs, mutual=mutual)
    sens = build_sensitivity(grid, T=T)
    vb = np.ones(3 * T) if baseline is None else baseline
    lo, hi = voltage_bounds(3, T, 0.05)
    return sens, build_coupling(sens, vb, lo, hi)


def test_headroom_length_reference_size():
    _, env = _envelope(T=48)
    assert env.w.shape == (288,)


def test_headroom_definition():
    sens, env = _envelope()
    np.testing.assert_allclose(env.w[:12], env.upper - env.baseline)
    np.testing.assert_allclose(env.w[12:], env.baseline - env.lower)
    assert np.all(env.lower < env.upper)


@pytest.mark.parametrize("v", [0.9, 1.0, 1.2])
def test_zero_profile_feasible_iff_baseline_in_band(v):
    sens, env = _envelope(baseline=np.full(12, v))
    in_band = np.all((env.lower <= env.baseline) & (env.baseline <= env.upper))
    assert bool(np.all(env.w >= 0)) == in_band


def test_single_upper_violation_hits_one_row():
    T = 2
    sens, env = _envelope(T=T, custs=[(1, "a")], mutual=False)
    # a 100 kW discharge at t=1 lifts phase a by ~0.16 p.u.^2, above the upper bound
    p = np.array([[0.0, -100.0]])
    slack = env.w - (env.Gamma(0) @ p[0])
    bad = np.flatnonzero(slack < 0)
    assert bad.tolist() == [1 * 3 + 0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inequality_forms_agree(seed):
    rng = np.random.default_rng(seed)
    T = 3
    sens, env = _envelope(T=T, baseline=rng.uniform(0.88, 1.12, 9))
    p = rng.normal(scale=40, size=(2, T))
    q = rng.normal(scale=40, size=(2, T))
    lhs = sum(env.Gamma(n) @ p[n] + env.Xi(n) @ q[n] for n in range(2))
    V = evaluate_voltage(env.baseline, sens, p, q)
    in_band = (env.lower <= V) & (V <= env.upper)
    rows_ok = lhs <= env.w
    np.testing.assert_array_equal(rows_ok[:9] & rows_ok[9:], in_band)
    np.testing.assert_allclose(env.coupling(p, q), lhs, atol=1e-12)
