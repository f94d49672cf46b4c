"""Exhaustive island enumeration for certifying the tree knapsack.

Buses are visited in breadth-first order so that a bus is only offered
once its parent has been decided; parent-closure is thereby enforced while
generating, not by filtering afterwards.
"""

from __future__ import annotations

import logging
from typing import Dict, FrozenSet, List, Tuple

from pydantic import BaseModel, Field

from src.islanding.errors import OracleSizeError
from src.islanding.grid_model import Network, units_down, units_up
from src.islanding.partition_solver import (
    bfs_layers,
    decompose_loads,
    root_connection,
    weighted_centi,
)
from src.islanding.power_circle import SupplyRegion

logger = logging.getLogger(__name__)

ORACLE_HARD_LIMIT = 20


class EnumerationResult(BaseModel):
    """Best objective over all feasible islands of a region."""

    best_objective: float = 0.0
    best_sets: List[Tuple[FrozenSet[int], FrozenSet[int]]] = Field(
        default_factory=list, description="(energized, shed) pairs reaching the best objective"
    )
    states_explored: int = 0

    @property
    def feasible(self) -> bool:
        return bool(self.best_sets)


def brute_force_partition(net: Network, region: SupplyRegion,
                          max_buses: int = ORACLE_HARD_LIMIT) -> EnumerationResult:
    """Enumerate every parent-closed bus set and shed assignment of ``region``.

    Raises:
        OracleSizeError: If the region has more than ``max_buses`` buses.
    """
    limit = min(max_buses, ORACLE_HARD_LIMIT)
    if region.size > limit:
        raise OracleSizeError(
            f"Region [{region.label()}] has {region.size} buses; exhaustive enumeration "
            f"is limited to {limit}. Use the tree knapsack solver for larger regions."
        )

    g = region.granularity
    cap = units_down(region.capacity, g)
    layered = bfs_layers(net, region)
    order = layered.order()
    splits = {s.bus: s for s in decompose_loads(net, region.members, g)}
    roots = set(layered.root_buses)

    floors: Dict[int, int] = {
        b: units_up(splits[b].fixed, g) for b in root_connection(net, region)
    }
    for bus_id, kw in region.committed.items():
        floors[bus_id] = max(floors.get(bus_id, 0), units_up(kw, g))

    # (units, centi, shed) choices per bus
    choices: Dict[int, List[Tuple[int, int, bool]]] = {}
    for bus_id in order:
        bus = net.bus(bus_id)
        split = splits[bus_id]
        fixed = units_up(split.fixed, g)
        full = units_up(split.total, g)
        options = [(full, weighted_centi(bus.weight, split.nominal_total), False)]
        if full > fixed:
            options.append((fixed, weighted_centi(bus.weight, split.nominal_fixed), True))
        if bus_id in region.unrestorable:
            options.append((0, 0, bus.load_active > 0))
        floor = floors.get(bus_id, 0)
        choices[bus_id] = [o for o in options if o[0] >= floor]

    required = set(floors) | roots
    best = -1
    best_sets: List[Tuple[FrozenSet[int], FrozenSet[int]]] = []
    explored = 0

    def visit(index: int, energized: FrozenSet[int], shed: FrozenSet[int],
              units: int, centi: int) -> None:
        nonlocal best, best_sets, explored
        if index == len(order):
            explored += 1
            if centi > best:
                best = centi
                best_sets = [(energized, shed)]
            elif centi == best:
                best_sets.append((energized, shed))
            return
        bus_id = order[index]
        parent = layered.parent.get(bus_id)
        reachable = bus_id in roots or parent in energized
        if not reachable:
            if bus_id not in required:
                visit(index + 1, energized, shed, units, centi)
            return
        if bus_id not in required:
            visit(index + 1, energized, shed, units, centi)
        for option_units, option_centi, is_shed in choices[bus_id]:
            if units + option_units > cap:
                continue
            visit(
                index + 1,
                energized | {bus_id},
                shed | {bus_id} if is_shed else shed,
                units + option_units,
                centi + option_centi,
            )

    visit(0, frozenset(), frozenset(), 0, 0)
    logger.debug(
        "Oracle explored %d complete assignments for region [%s]", explored, region.label(),
    )
    return EnumerationResult(
        best_objective=best / 100 if best >= 0 else 0.0,
        best_sets=best_sets,
        states_explored=explored,
    )
