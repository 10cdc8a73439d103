from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsynth import fixtures as fx
from gridsynth.dc_power_flow import (
    bus_injections,
    flow_operator,
    flows_for_table,
    line_limits,
    loading_fractions,
)
from gridsynth.errors import NetworkError, TableError
from gridsynth.grid_model import Bus, Generator, Line, Network
from gridsynth.tables import Table


def chain(sus=(1.0,), n=2):
    buses = tuple(Bus(str(i)) for i in range(n))
    lines = tuple(Line(f"l{i}", str(i), str(i + 1), s, 1.0) for i, s in enumerate(sus))
    return Network(buses, lines, ())


def triangle(b=1.0):
    buses = (Bus("1"), Bus("2"), Bus("3"))
    lines = (Line("12", "1", "2", b, 1.0), Line("23", "2", "3", b, 1.0), Line("13", "1", "3", b, 1.0))
    return Network(buses, lines, ())


@pytest.mark.parametrize("b", [0.1, 1.0, 37.0])
def test_single_line_carries_injection(b):
    op = flow_operator(chain((b,)))
    np.testing.assert_allclose(op(np.array([1.0, -1.0])), [1.0])
    np.testing.assert_allclose(op(np.zeros(2)), [0.0])


def test_triangle_split():
    op = flow_operator(triangle())
    f = op(np.array([1.0, -1.0, 0.0]))
    # 2/3 on the direct line, 1/3 around through bus 3
    np.testing.assert_allclose(f, [2 / 3, -1 / 3, 1 / 3], atol=1e-14)


def test_reference_choice_does_not_matter():
    net = fx.reference_grid()
    p = np.random.default_rng(0).normal(size=len(net.buses))
    p -= p.mean()
    np.testing.assert_allclose(flow_operator(net, 0)(p), flow_operator(net, 17)(p), atol=1e-12)


def test_flow_conservation_on_reference_grid():
    net = fx.reference_grid()
    op = flow_operator(net)
    p = np.random.default_rng(1).normal(size=(len(net.buses), 3))
    p -= p.mean(axis=0)
    f = op(p)
    inc = np.zeros((len(net.buses), len(net.lines)))
    for j, ln in enumerate(net.lines):
        inc[net.bus_index[ln.from_bus], j] = 1
        inc[net.bus_index[ln.to_bus], j] = -1
    np.testing.assert_allclose(inc @ f, p, atol=1e-11)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.floats(0.1, 10))
def test_linearity(p, k):
    op = flow_operator(chain((1.0, 2.0, 3.0), n=4))
    p = np.array(p)
    p -= p.mean()
    np.testing.assert_allclose(op(k * p), k * op(p), atol=1e-9)


def test_disconnected_rejected():
    net = Network((Bus("1"), Bus("2"), Bus("3")), (Line("l", "1", "2", 1.0, 1.0),), ())
    with pytest.raises(NetworkError):
        flow_operator(net)


def small_case():
    net = Network(
        (Bus("1", "AA", 0.0, False), Bus("2", "AA", 1.0, True)),
        (Line("l", "1", "2", 3.0, 2.0),),
        (Generator("g", "1", "coal", 5.0, 0.5),),
    )
    loads = Table(("2",), np.array([[1.0], [2.0]]))
    gens = Table(("g",), np.array([[1.0], [2.0]]))
    return net, loads, gens


def test_flows_for_table():
    net, loads, gens = small_case()
    np.testing.assert_allclose(bus_injections(net, loads, gens), [[1, -1], [2, -2]])
    lines = flows_for_table(net, loads, gens)
    assert lines.columns == ("l",)
    np.testing.assert_allclose(lines.values[:, 0], [1.0, 2.0])


def test_constant_injections_constant_flows():
    net, _, _ = small_case()
    loads = Table(("2",), np.full((5, 1), 1.5))
    gens = Table(("g",), np.full((5, 1), 1.5))
    f = flows_for_table(net, loads, gens).values
    assert np.ptp(f) == 0


def test_unbalanced_step_reported():
    net, loads, gens = small_case()
    gens = Table(("g",), np.array([[1.0], [2.5]]))
    with pytest.raises(TableError, match="step 1"):
        flows_for_table(net, loads, gens)


def test_unknown_label():
    net, loads, _ = small_case()
    with pytest.raises(TableError):
        flows_for_table(net, loads, Table(("nope",), np.ones((2, 1))))


def test_loading_fractions_boundaries():
    limits = np.array([1.0, 2.0])
    assert loading_fractions(np.zeros((3, 2)), limits) == {0.8: 0.0, 1.0: 0.0, 1.2: 0.0}
    fr = loading_fractions(np.array([[1.0, 0.0]]), limits)
    assert fr == {0.8: 0.5, 1.0: 0.5, 1.2: 0.0}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_loading_fractions_monotone(seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(20, 4)) * 2
    fr = loading_fractions(f, np.array([1.0, 0.5, 2.0, 3.0]))
    assert fr[0.8] >= fr[1.0] >= fr[1.2]


def test_line_limits_by_label():
    net = fx.constant_load_grid()
    np.testing.assert_array_equal(line_limits(net, ["L2", "L1"]), [1.0, 1.0])
    with pytest.raises(ValueError):
        loading_fractions(np.ones((1, 1)), np.array([0.0]))
