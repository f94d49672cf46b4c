"""Property-based checks on random radial feeders.

The oracle comparisons together draw 400 networks of up to 12 buses and the
whole module about 1000 cases; every run uses the same derandomized draws.
"""

import networkx as nx
from hypothesis import given, settings
from hypothesis import strategies as st

from src.islanding.errors import InfeasibleCommitmentError
from src.islanding.grid_model import Priority, apply_faults, to_graph
from src.islanding.oracle import brute_force_partition
from src.islanding.partition_solver import region_correction, solve_partition
from src.islanding.power_circle import expand_circle, max_supply_regions
from src.islanding.reachability import (
    adjacency_matrix,
    reachability_by_powers,
    reachability_matrix,
    regions,
)
from tests.networks import build_network, region_of

LOADS = [0, 0.5, 1, 2.3, 4, 7, 12]
FRACTIONS = [0.0, 0.5, 1.0]


@st.composite
def feeders(draw, max_buses=12, zero_load=(1,)):
    """Random radial feeder: bus k > 1 hangs off a lower-numbered bus."""
    n = draw(st.integers(2, max_buses))
    edges = [(draw(st.integers(1, k - 1)), k) for k in range(2, n + 1)]
    loads = [0 if k in zero_load else draw(st.sampled_from(LOADS)) for k in range(1, n + 1)]
    priorities = {k: draw(st.sampled_from(list(Priority))) for k in range(1, n + 1)}
    controllable = {k: draw(st.sampled_from(FRACTIONS)) for k in range(1, n + 1)}
    return build_network(loads, edges, priorities=priorities, controllable=controllable)


@st.composite
def feeders_with_dgs(draw):
    net = draw(feeders())
    count = draw(st.integers(1, 3))
    buses = [draw(st.integers(1, net.n_buses)) for _ in range(count)]
    dgs = [(f"G{k}", bus, draw(st.sampled_from([1, 5, 10, 20]))) for k, bus in enumerate(buses, 1)]
    edges = [(b.from_bus, b.to_bus) for b in net.branches]
    return build_network(
        [bus.load_active for bus in net.buses],
        edges,
        dgs=dgs,
        priorities={bus.id: bus.priority for bus in net.buses},
    )


def tie_rank(candidate):
    energized, shed = candidate
    return len(shed), -len(energized), sorted(energized)


@settings(derandomize=True, deadline=None, max_examples=200)
@given(net=feeders(), data=st.data())
def test_closure_matches_powers_and_components(net, data):
    cut = data.draw(st.lists(st.integers(0, len(net.branches) - 1), max_size=3, unique=True))
    faulted = apply_faults(net, [net.branches[k].key for k in cut])

    a = adjacency_matrix(faulted)
    r = reachability_matrix(a)
    assert r == reachability_by_powers(a)
    assert reachability_matrix(r) == r
    for component in nx.connected_components(to_graph(faulted)):
        bus = min(component)
        expected = set(component) if len(component) > 1 else set()
        assert set(r.row(bus)) == expected
    assert sum(region.size for region in regions(faulted)) == faulted.n_buses


@settings(derandomize=True, deadline=None, max_examples=200)
@given(net=feeders(), capacity=st.integers(0, 30), data=st.data())
def test_knapsack_matches_enumeration(net, capacity, data):
    unloaded = [b.id for b in net.buses if b.id > 1 and b.load_active == 0]
    second = data.draw(st.sampled_from([None, *unloaded]))
    roots = {1} if second is None else {1, second}
    region = region_of(range(1, net.n_buses + 1), roots, capacity)

    certified = brute_force_partition(net, region)
    try:
        island = solve_partition(net, region)
    except InfeasibleCommitmentError:
        assert not certified.feasible
        return

    assert certified.feasible
    assert island.objective == certified.best_objective
    assert island.energized == min(certified.best_sets, key=tie_rank)[0]
    assert island.rounded_load <= capacity
    assert island.total_restored <= capacity
    assert roots <= island.energized
    assert nx.is_connected(to_graph(net).subgraph(island.energized))


@settings(derandomize=True, deadline=None, max_examples=200)
@given(net=feeders(zero_load=()), capacity=st.integers(0, 40))
def test_corrected_region_matches_enumeration(net, capacity):
    region = region_of(range(1, net.n_buses + 1), {1}, capacity)
    uncorrected = brute_force_partition(net, region)
    try:
        corrected = region_correction(net, region)
    except InfeasibleCommitmentError:
        assert not uncorrected.feasible
        return

    assert uncorrected.feasible
    island = solve_partition(net, corrected)
    assert island.objective == brute_force_partition(net, corrected).best_objective
    assert island.objective <= uncorrected.best_objective
    assert island.rounded_load <= capacity
    assert set(corrected.committed) <= island.energized


@settings(derandomize=True, deadline=None, max_examples=200)
@given(net=feeders(), low=st.integers(0, 20), extra=st.integers(0, 20))
def test_circle_grows_with_capacity(net, low, extra):
    small = expand_circle(net, [1], low)
    large = expand_circle(net, [1], low + extra)

    assert small.members <= large.members
    assert small.committed_load <= low
    assert nx.is_connected(to_graph(net).subgraph(large.members))


@settings(derandomize=True, deadline=None, max_examples=200)
@given(net=feeders_with_dgs())
def test_supply_regions_disjoint_and_covering(net):
    (whole,) = regions(net)
    final = max_supply_regions(net, whole)
    graph = to_graph(net)

    for i, region in enumerate(final):
        assert nx.is_connected(graph.subgraph(region.members))
        for other in final[i + 1:]:
            assert not region.overlaps(other)

    covered = frozenset().union(*(r.members for r in final))
    for dg in net.dgs:
        circle = expand_circle(net, [dg.bus], dg.predicted_output, dgs=[dg.id])
        assert circle.members <= covered
    assert sorted(d for r in final for d in r.dgs) == sorted(dg.id for dg in net.dgs)
