"""DG stable output and capacity-bounded supply ranges ("power circles").

A circle grows outward from its root buses one hop ring at a time. A bus
joins when the rounded load along its supply path, root included, still
fits the capacity. Circles that share a bus are pooled and regrown until
no two regions overlap.
"""

from __future__ import annotations

import logging
from typing import Dict, FrozenSet, Iterable, List, Optional

from pydantic import BaseModel, Field

from src.islanding.errors import RegionError
from src.islanding.grid_model import (
    DistributedGenerator,
    Network,
    closed_adjacency,
    from_units,
    hop_distances,
    units_down,
    units_up,
)
from src.islanding.reachability import ReachableRegion

logger = logging.getLogger(__name__)


class SupplyRegion(BaseModel):
    """A DG group together with the buses it is able to feed."""

    model_config = {"frozen": True}

    dgs: FrozenSet[str] = Field(default_factory=frozenset)
    root_buses: FrozenSet[int]
    capacity: float = Field(..., ge=0, description="Pooled stable output in kW")
    members: FrozenSet[int]
    committed_load: float = Field(0.0, description="Heaviest rounded supply-path load in kW")
    surplus: float = Field(0.0, ge=0, description="capacity - committed_load")
    total_load: float = Field(0.0, description="Sum of rounded member loads in kW")
    shortfall: float = Field(0.0, ge=0, description="Root load that the capacity cannot carry")
    unrestorable: FrozenSet[int] = Field(
        default_factory=frozenset, description="Roots whose own load exceeds the capacity"
    )
    path_load: Dict[int, float] = Field(default_factory=dict)
    granularity: float = Field(1.0, gt=0)
    committed: Dict[int, float] = Field(
        default_factory=dict,
        description="Lower bounds on served rounded kW set by region correction",
    )

    @property
    def size(self) -> int:
        return len(self.members)

    def overlaps(self, other: "SupplyRegion") -> bool:
        return not self.members.isdisjoint(other.members)

    def label(self) -> str:
        return ", ".join(sorted(self.dgs)) or ",".join(str(b) for b in sorted(self.root_buses))


def stable_output(dg: DistributedGenerator, granularity: float = 1.0,
                  sigma_multiplier: float = 1.0) -> float:
    """Forecast output reduced by ``sigma_multiplier`` deviations, floored to the granularity."""
    reduced = max(dg.predicted_output - sigma_multiplier * dg.sigma, 0.0)
    return from_units(units_down(reduced, granularity), granularity)


def _check_origin(net: Network, origin: Iterable[int],
                  adjacency: Dict[int, List[int]]) -> FrozenSet[int]:
    roots = frozenset(origin)
    if not roots:
        raise RegionError("A supply region needs at least one origin bus.")
    for bus_id in sorted(roots):
        if not net.has_bus(bus_id):
            raise RegionError(
                f"Origin bus {bus_id} is not part of the network "
                f"(valid ids are 1..{net.n_buses})."
            )
    first = min(roots)
    reach = hop_distances(adjacency, [first])
    stray = sorted(r for r in roots if r not in reach)
    if stray:
        raise RegionError(
            f"Origin buses {sorted(roots)} span several reachable regions; "
            f"{stray} cannot be reached from bus {first} over closed branches."
        )
    return roots


def expand_circle(net: Network, origin: Iterable[int], capacity: float,
                  granularity: float = 1.0, dgs: Iterable[str] = (),
                  adjacency: Optional[Dict[int, List[int]]] = None) -> SupplyRegion:
    """Grow the supply range of ``capacity`` kW from the origin buses.

    Raises:
        RegionError: If an origin bus is unknown or the origins are not connected.
    """
    if adjacency is None:
        adjacency = closed_adjacency(net)
    roots = _check_origin(net, origin, adjacency)
    cap = units_down(capacity, granularity)
    load_units = {bus.id: units_up(bus.load_active, granularity) for bus in net.buses}

    path: Dict[int, int] = {}
    unrestorable = set()
    for root in sorted(roots):
        if load_units[root] > cap:
            unrestorable.add(root)
            path[root] = 0
        else:
            path[root] = load_units[root]

    def admission_key(bus_id: int):
        bus = net.bus(bus_id)
        return (-bus.weight, -load_units[bus_id], bus_id)

    ring = sorted(roots)
    while ring:
        frontier = sorted(
            {n for b in ring for n in adjacency[b] if n not in path},
            key=admission_key,
        )
        admitted: List[int] = []
        for candidate in frontier:
            supply = min(path[n] for n in adjacency[candidate] if n in path)
            if supply + load_units[candidate] <= cap:
                path[candidate] = supply + load_units[candidate]
                admitted.append(candidate)
        ring = admitted

    shortfall = sum(load_units[r] for r in unrestorable)
    if unrestorable:
        logger.warning(
            "Root bus(es) %s carry more load than the %.1f kW available; "
            "their load is marked unrestorable",
            sorted(unrestorable), capacity,
        )
    return _build_region(
        dgs=frozenset(dgs), roots=roots, capacity=capacity, path=path,
        load_units=load_units, granularity=granularity,
        unrestorable=frozenset(unrestorable), shortfall_units=shortfall,
    )


def _build_region(dgs: FrozenSet[str], roots: FrozenSet[int], capacity: float,
                  path: Dict[int, int], load_units: Dict[int, int], granularity: float,
                  unrestorable: FrozenSet[int], shortfall_units: int) -> SupplyRegion:
    committed_units = max(path.values()) if path else 0
    committed_load = from_units(committed_units, granularity)
    return SupplyRegion(
        dgs=dgs,
        root_buses=roots,
        capacity=capacity,
        members=frozenset(path),
        committed_load=committed_load,
        surplus=max(round(capacity - committed_load, 9), 0.0),
        total_load=from_units(sum(load_units[b] for b in path), granularity),
        shortfall=from_units(shortfall_units, granularity),
        unrestorable=unrestorable,
        path_load={b: from_units(u, granularity) for b, u in sorted(path.items())},
        granularity=granularity,
    )


def _merge_pair(net: Network, a: SupplyRegion, b: SupplyRegion,
                adjacency: Dict[int, List[int]]) -> SupplyRegion:
    granularity = a.granularity
    capacity = round(a.capacity + b.capacity, 9)
    regrown = expand_circle(
        net, a.root_buses | b.root_buses, capacity,
        granularity=granularity, dgs=a.dgs | b.dgs, adjacency=adjacency,
    )
    load_units = {bus.id: units_up(bus.load_active, granularity) for bus in net.buses}

    path: Dict[int, int] = {m: units_up(v, granularity) for m, v in regrown.path_load.items()}
    for source in (a, b):
        for member, value in source.path_load.items():
            if member not in path:
                path[member] = units_up(value, granularity)

    return _build_region(
        dgs=a.dgs | b.dgs,
        roots=a.root_buses | b.root_buses,
        capacity=capacity,
        path=path,
        load_units=load_units,
        granularity=granularity,
        unrestorable=regrown.unrestorable,
        shortfall_units=units_up(regrown.shortfall, granularity),
    )


def merge_overlapping(net: Network, regions: List[SupplyRegion]) -> List[SupplyRegion]:
    """Pool regions that share a bus and regrow them until all are disjoint."""
    adjacency = closed_adjacency(net)
    pending = list(regions)
    merged_any = True
    while merged_any:
        merged_any = False
        for i in range(len(pending)):
            for j in range(i + 1, len(pending)):
                if pending[i].overlaps(pending[j]):
                    combined = _merge_pair(net, pending[i], pending[j], adjacency)
                    logger.info(
                        "Merged overlapping circles [%s] and [%s] into %d buses, %.1f kW",
                        pending[i].label(), pending[j].label(),
                        combined.size, combined.capacity,
                    )
                    pending = [r for k, r in enumerate(pending) if k not in (i, j)]
                    pending.append(combined)
                    merged_any = True
                    break
            if merged_any:
                break
    return pending


def max_supply_regions(net: Network, region: ReachableRegion, granularity: float = 1.0,
                       sigma_multiplier: float = 1.0) -> List[SupplyRegion]:
    """Final, pairwise disjoint supply regions of the DGs in ``region``."""
    adjacency = closed_adjacency(net)
    circles: List[SupplyRegion] = []
    for dg_id in sorted(region.dgs):
        dg = net.dg(dg_id)
        capacity = stable_output(dg, granularity, sigma_multiplier)
        circle = expand_circle(
            net, [dg.bus], capacity, granularity=granularity, dgs=[dg.id], adjacency=adjacency,
        )
        logger.info(
            "Circle of %s: %d buses, committed %.1f of %.1f kW",
            dg.id, circle.size, circle.committed_load, capacity,
        )
        circles.append(circle)
    final = merge_overlapping(net, circles)
    return sorted(final, key=lambda r: (sorted(r.dgs), sorted(r.root_buses)))
