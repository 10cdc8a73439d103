from __future__ import annotations

import json

import numpy as np
import pytest

from gridsynth import fixtures as fx
from gridsynth.errors import NetworkError
from gridsynth.grid_model import (
    Bus,
    Generator,
    Line,
    Network,
    apply_country_membership,
    build_matrices,
    generator_bus_matrix,
    network_to_json,
    normalize_gen_type,
    parse_network,
    read_country_membership,
    remove_small_generators,
    validate_network,
    write_country_membership,
)


def doc(**extra):
    d = {
        "baseMVA": 100.0,
        "bus": {"1": {"bus_i": 1, "country": "AA"}, "2": {"bus_i": 2, "country": "AA"}},
        "branch": {"1": {"index": 1, "f_bus": 1, "t_bus": 2, "br_x": 0.1, "rate_a": 5.0}},
        "gen": {"1": {"index": 1, "gen_bus": 1, "type": "coal", "pmax": 3.0, "availability": 0.5}},
        "load": {"1": {"load_bus": 2, "pd": 1.0}},
    }
    d.update(extra)
    return json.dumps(d)


def test_two_bus_document():
    net = parse_network(doc())
    assert len(net.buses) == 2 and len(net.lines) == 1
    assert net.lines[0].susceptance == pytest.approx(10.0)
    # coal gets the default ramp
    assert net.generators[0].ramp_limit == 2.0
    assert net.buses[1].is_load and net.buses[1].load_weight == 1.0


def test_dangling_reference():
    bad = doc(branch={"1": {"f_bus": 1, "t_bus": "X", "br_x": 0.1, "rate_a": 1.0}})
    with pytest.raises(NetworkError, match="'X'"):
        parse_network(bad)


@pytest.mark.parametrize("text", ["not json", "[]", json.dumps({"bus": {}})])
def test_malformed_documents(text):
    with pytest.raises(NetworkError):
        parse_network(text)


def test_out_of_service_elements_skipped():
    d = json.loads(doc())
    d["gen"]["2"] = {"gen_bus": 2, "type": "gas", "pmax": 1.0, "availability": 0.2, "gen_status": 0}
    net = parse_network(json.dumps(d))
    assert [g.id for g in net.generators] == ["1"]


def test_disconnected_keeps_largest_component():
    d = json.loads(doc())
    d["bus"]["3"] = {"bus_i": 3, "country": "AA"}
    net = parse_network(json.dumps(d))
    assert [b.id for b in net.buses] == ["1", "2"]


def test_generator_type_vocabulary():
    assert normalize_gen_type("Fossil Hard coal") == "coal"
    assert normalize_gen_type("something odd") == "other"


def test_small_generator_filter():
    net = fx.constant_load_grid()
    gens = (
        Generator("a", "B01", "coal", 0.4, 0.5),
        Generator("b", "B01", "coal", 0.6, 0.5),
    )
    small = Network(net.buses, net.lines, gens)
    assert [g.id for g in remove_small_generators(small, 0.5).generators] == ["b"]
    assert remove_small_generators(small, 0.0) is small


def test_incidence_and_susceptance():
    net = Network(
        (Bus("1"), Bus("2"), Bus("3")),
        (Line("a", "1", "2", 2.0, 1.0), Line("b", "2", "3", 3.0, 1.0), Line("c", "3", "1", 4.0, 1.0)),
        (),
    )
    m = build_matrices(net)
    inc = m.incidence.toarray()
    assert inc.shape == (3, 3)
    np.testing.assert_array_equal(inc[:, 0], [1, -1, 0])
    np.testing.assert_array_equal(inc.sum(axis=0), 0)
    np.testing.assert_array_equal(m.susceptance.diagonal(), [2.0, 3.0, 4.0])


def test_generator_bus_matrix():
    net = fx.constant_load_grid()
    c = generator_bus_matrix(net, net.generators).toarray()
    assert c.shape == (5, 3)
    assert c[0, 0] == 1 and c[2, 1] == 1 and c.sum() == 3


def test_validation_report_flags_weights():
    buses = (Bus("1", "AA", 0.5, True), Bus("2", "AA", 0.4, True))
    net = Network(buses, (Line("l", "1", "2", 1.0, 1.0),), ())
    rep = validate_network(net)
    assert rep.connected
    assert rep.weight_deviation["AA"] == pytest.approx(0.1)
    assert rep.flagged_countries == ["AA"]
    assert "connected: true" in rep.as_text()


def test_json_round_trip():
    net = fx.reference_grid()
    again = parse_network(network_to_json(net))
    assert again.buses == net.buses
    assert again.generators == net.generators
    for a, b in zip(again.lines, net.lines):
        assert a.id == b.id and a.susceptance == pytest.approx(b.susceptance, rel=1e-15)


def test_country_membership_round_trip():
    members = {"B1": "FR", "B2": "FR", "B3": "DE"}
    text = write_country_membership(members)
    assert text.splitlines()[0] == "DE,FR"
    assert read_country_membership(text) == members


def test_membership_applies():
    net = fx.constant_load_grid()
    moved = apply_country_membership(net, {"B01": "ZZ"}, None)
    assert moved.buses[0].country == "ZZ"
    assert moved.gen_country(moved.generators[0]) == "ZZ"


@pytest.mark.parametrize(
    "line",
    [Line("l", "1", "1", 1.0, 1.0), Line("l", "1", "2", -1.0, 1.0), Line("l", "1", "2", 1.0, 0.0)],
)
def test_invalid_lines_rejected(line):
    with pytest.raises(NetworkError):
        Network((Bus("1"), Bus("2")), (line,), ())
