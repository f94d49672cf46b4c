import pytest

from src.islanding.errors import OracleSizeError
from src.islanding.grid_model import Priority
from src.islanding.oracle import ORACLE_HARD_LIMIT, brute_force_partition
from src.islanding.partition_solver import region_correction, solve_partition
from tests.networks import build_network, chain, region_of


class TestBruteForce:
    """Exhaustive enumeration of parent-closed islands."""

    def test_shed_star(self):
        net = build_network([0, 6, 6], [(1, 2), (1, 3)],
                            priorities={2: Priority.PRIMARY}, controllable={3: 0.5})
        result = brute_force_partition(net, region_of({1, 2, 3}, {1}, 10))
        assert result.feasible
        assert result.best_objective == pytest.approx(630)
        assert result.best_sets == [(frozenset({1, 2, 3}), frozenset({3}))]
        assert result.states_explored > 1

    def test_agrees_with_knapsack(self, priority_chain):
        region = region_of({1, 2, 3, 4}, {1}, 10)
        island = solve_partition(priority_chain, region)
        result = brute_force_partition(priority_chain, region)
        assert result.best_objective == pytest.approx(island.objective)

    def test_respects_commitments(self):
        net = build_network([0, 5, 5], [(1, 2), (1, 3)], priorities={2: Priority.TERTIARY})
        result = brute_force_partition(net, region_of({1, 2, 3}, {1}, 5, committed={2: 5.0}))
        assert result.best_objective == pytest.approx(5)

    def test_infeasible_region(self):
        net = build_network([0, 4, 0], chain(3))
        result = brute_force_partition(net, region_of({1, 2, 3}, {1, 3}, 1))
        assert not result.feasible
        assert result.best_objective == 0

    def test_size_guard(self):
        net = build_network([0] * 5, chain(5))
        with pytest.raises(OracleSizeError, match="limited to 4"):
            brute_force_partition(net, region_of(set(range(1, 6)), {1}, 10), max_buses=4)

    def test_hard_limit(self):
        n = ORACLE_HARD_LIMIT + 1
        net = build_network([0] * n, chain(n))
        with pytest.raises(OracleSizeError, match=f"limited to {ORACLE_HARD_LIMIT}"):
            brute_force_partition(net, region_of(set(range(1, n + 1)), {1}, 10), max_buses=100)

    def test_shipped_dg5_region(self, faulted69, supply69):
        region = region_correction(faulted69, supply69[2])
        result = brute_force_partition(faulted69, region)
        assert result.best_objective == pytest.approx(15640)
        assert (frozenset({49, 50, 51, 52}), frozenset()) in result.best_sets
