"""Scenario files: parsing, validation, round trip and result files."""

import copy
import csv
import json

import numpy as np
import pytest
import yaml

from ccadmm_ev.errors import ScenarioValidationError
from ccadmm_ev.harness import run
from ccadmm_ev.oracle import synthetic_scenario
from ccadmm_ev.scenario import (
    bundled_path, emit_results, parse_scenario, read_bitmap, scenario_from_dict, scenario_to_dict,
)


@pytest.fixture
def doc():
    """A small explicit scenario document (every EV listed)."""
    return scenario_to_dict(synthetic_scenario(N=3, T=4, seed=2))


def _errors(doc, **kw):
    with pytest.raises(ScenarioValidationError) as info:
        scenario_from_dict(doc, **kw)
    return info.value.errors


def test_bundled_example1():
    scn = parse_scenario("example1")
    assert (scn.N, scn.T, scn.delta) == (150, 48, 0.5)
    assert scn.K == 3
    assert all(scn.comm.degree(u) == 149 for u in range(scn.N))
    assert scn.S == 30 and scn.c == 100.0
    assert scn.grid.edges[0].impedance("a", "a") == pytest.approx(0.1313 + 0.3856j)


def test_bundled_example2_graph():
    scn = parse_scenario("example2")
    assert scn.N == 150
    assert {scn.comm.degree(u) for u in range(scn.N)} == {70}


def test_bundled_files_are_reproducible():
    a = parse_scenario("example1")
    b = parse_scenario(bundled_path("example1"))
    assert [e.soc_target for e in a.evs] == [e.soc_target for e in b.evs]


def test_unreachable_target_names_the_ev(doc):
    ev = doc["ev"]["explicit"][1]
    ev["soc_target"] = ev["soc_init"] + doc["horizon"]["delta"] * 4 * ev["p_max"] + 1.0
    ev["soc_max"] = ev["soc_target"] + 1.0
    errs = _errors(doc)
    assert any(e.startswith("EV 1:") and "unreachable" in e for e in errs)


def test_epsilon_out_of_range(doc):
    doc["algorithm"]["epsilon"] = 1.2
    assert any("epsilon" in e for e in _errors(doc))


def test_override_is_validated_too(doc):
    assert any("epsilon" in e for e in _errors(doc, overrides={"epsilon": 1.2}))


def test_all_errors_reported_together(doc):
    doc["algorithm"]["epsilon"] = 1.2
    doc["algorithm"]["c"] = -1.0
    doc["prices"] = doc["prices"][:-1]
    errs = _errors(doc)
    assert len(errs) >= 3


def test_missing_sections_listed(doc):
    del doc["grid"], doc["comm"]
    errs = _errors(doc)
    assert "missing section 'grid'" in errs and "missing section 'comm'" in errs


def test_load_length_mismatch(doc):
    doc["loads"]["p"]["1:a"] = [1.0, 2.0]
    assert any("loads.p[1:a]" in e for e in _errors(doc))


def test_disconnected_explicit_graph(doc):
    doc["comm"] = {"kind": "explicit", "edges": [[0, 1]]}
    assert any(e.startswith("comm:") for e in _errors(doc))


def test_overrides_replace_file_values(doc):
    scn = scenario_from_dict(doc, {"S": 7, "c": 3.0, "gamma": 0.2, "epsilon": 0.4, "seed": None})
    assert (scn.S, scn.c, scn.policy.gamma, scn.policy.epsilon) == (7, 3.0, 0.2, 0.4)


def test_reference_impedance_self_check(tmp_path):
    with open(bundled_path("example1")) as fh:
        d = yaml.safe_load(fh)
    d["grid"]["edges"][0]["z"]["aa"] = [0.2, 0.3856]
    path = tmp_path / "tampered.yaml"
    path.write_text(yaml.safe_dump(d))
    with pytest.raises(ScenarioValidationError, match="aa"):
        parse_scenario(path)


def test_malformed_file(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: [unclosed\n")
    with pytest.raises(ScenarioValidationError):
        parse_scenario(path)
    with pytest.raises(ScenarioValidationError):
        parse_scenario(tmp_path / "missing.yaml")


def test_round_trip(doc):
    a = scenario_from_dict(doc)
    b = scenario_from_dict(copy.deepcopy(scenario_to_dict(a)))
    assert scenario_to_dict(a) == scenario_to_dict(b)
    np.testing.assert_array_equal(a.envelope.w, b.envelope.w)
    assert a.comm.neighbors == b.comm.neighbors


def test_round_trip_of_bundled_randomized_evs():
    a = parse_scenario("example2")
    b = scenario_from_dict(yaml.safe_load(yaml.safe_dump(scenario_to_dict(a))))
    assert [vars(e)["soc_init"] for e in a.evs] == [vars(e)["soc_init"] for e in b.evs]
    assert a.comm.neighbors == b.comm.neighbors


# ---------------------------------------------------------------------------
# result files

@pytest.fixture(scope="module")
def emitted(tmp_path_factory):
    scn = synthetic_scenario(N=3, T=4, seed=5, S=3)
    bench = run(scn, mode="benchmark")
    cens = run(scn, mode="censored")
    out = tmp_path_factory.mktemp("run")
    emit_results(cens, out, scenario=scn, benchmark=bench)
    bdir = tmp_path_factory.mktemp("bench")
    emit_results(bench, bdir, scenario=scn)
    return scn, cens, bench, out, bdir


def _csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_voltage_csv_layout(emitted):
    scn, cens, _, out, _ = emitted
    rows = _csv(out / "voltages.csv")
    assert rows[0] == ["t", "1:a", "1:b", "1:c"]
    assert len(rows) == scn.T + 1
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    np.testing.assert_allclose(vals ** 2, cens.voltages.reshape(scn.T, scn.K), rtol=1e-14)


def test_bitmap_and_profiles(emitted):
    scn, cens, _, out, bdir = emitted
    assert np.array_equal(read_bitmap(out), cens.bitmap)
    assert read_bitmap(bdir).all()
    rows = _csv(out / "profiles.csv")
    assert rows[0] == ["t", "p0", "p1", "p2", "q0", "q1", "q2"]
    assert float(rows[1][1]) == cens.p[0, 0]


def test_metrics_file(emitted):
    _, cens, bench, out, _ = emitted
    m = json.loads((out / "metrics.json").read_text())
    assert m["transmissions"] == cens.transmissions
    assert m["fraction_vs_benchmark"] == cens.transmissions / bench.transmissions
    assert len(m["consensus_residuals"]) == cens.S
    assert "wall_time" in m


def test_scenario_echo_parses_back(emitted):
    scn, _, _, out, _ = emitted
    again = parse_scenario(out / "scenario.yaml")
    assert scenario_to_dict(again) == scenario_to_dict(scn)
