"""Island selection inside one supply region.

The region is layered breadth-first from its DG buses and the resulting
forest is solved as a tree knapsack: each bus is off, energized with its
reducible load shed, or fully served, and a bus can only be energized
when its parent is. Capacity is floored and loads are ceiled to the power
granularity, so every table index is a whole number of granularity steps.

Solutions are ranked by weighted restored load, then by fewer shed buses,
then by more energized buses. Scores are packed into one int64 per table
cell so that the knapsack merge stays vectorised. Selections that still tie
are settled afterwards in favour of the lexicographically smallest energized
set.

Tables hold one column per granularity step of capacity, so a region may
not need more than ``MAX_CAPACITY_STEPS`` of them.
"""

from __future__ import annotations

import logging
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.islanding.errors import InfeasibleCommitmentError, RegionError
from src.islanding.grid_model import (
    Network,
    Priority,
    closed_adjacency,
    from_units,
    units_down,
    units_up,
)
from src.islanding.power_circle import SupplyRegion

logger = logging.getLogger(__name__)

MAX_REGION_BUSES = 2047
MAX_CAPACITY_STEPS = 100_000

_VALUE_SHIFT = 1 << 24
_SHED_SHIFT = 1 << 12
_NEG = -(1 << 60)
_INFEASIBLE = _NEG // 2


class RoundedPowers(BaseModel):
    """Capacity and loads snapped to the granularity grid."""

    model_config = {"frozen": True}

    granularity: float
    capacity: float
    loads: Dict[int, float] = Field(default_factory=dict)


class LoadSplit(BaseModel):
    """Reducible and fixed parts of one bus load, rounded and nominal."""

    model_config = {"frozen": True}

    bus: int
    reducible: float = Field(..., ge=0, description="Rounded sheddable kW")
    fixed: float = Field(..., ge=0, description="Rounded non-sheddable kW")
    nominal_reducible: float = 0.0
    nominal_fixed: float = 0.0

    @property
    def total(self) -> float:
        return round(self.reducible + self.fixed, 9)

    @property
    def nominal_total(self) -> float:
        return self.nominal_reducible + self.nominal_fixed


class LayeredRegion(BaseModel):
    """Hop-distance layering of a region from its root buses."""

    model_config = {"frozen": True}

    root_buses: FrozenSet[int]
    layers: List[List[int]]
    parent: Dict[int, int] = Field(default_factory=dict)

    def children(self) -> Dict[int, List[int]]:
        kids: Dict[int, List[int]] = {b: [] for layer in self.layers for b in layer}
        for child, parent in sorted(self.parent.items()):
            kids[parent].append(child)
        return kids

    def depth(self) -> Dict[int, int]:
        return {b: k for k, layer in enumerate(self.layers) for b in layer}

    def path_to_root(self, bus: int) -> List[int]:
        """Ancestors of ``bus`` up to, but excluding, its root."""
        path = []
        node = self.parent.get(bus)
        while node is not None and node not in self.root_buses:
            path.append(node)
            node = self.parent.get(node)
        return path

    def order(self) -> List[int]:
        return [b for layer in self.layers for b in layer]


class Island(BaseModel):
    """Final partition element: DG group and the buses it serves."""

    model_config = {"frozen": True}

    dgs: FrozenSet[str] = Field(default_factory=frozenset)
    root_buses: FrozenSet[int] = Field(default_factory=frozenset)
    capacity: float = 0.0
    energized: FrozenSet[int] = Field(default_factory=frozenset)
    restored_kw: Dict[int, float] = Field(default_factory=dict)
    shed_kw: Dict[int, float] = Field(default_factory=dict)
    objective: float = 0.0
    rounded_load: float = Field(0.0, description="Served load in rounded kW")
    granularity: float = 1.0

    @property
    def total_restored(self) -> float:
        return round(sum(self.restored_kw.values()), 6)

    @property
    def shed_buses(self) -> List[int]:
        return sorted(b for b, kw in self.shed_kw.items() if kw > 0)


class _Option(NamedTuple):
    units: int
    centi: int
    shed: bool
    served_kw: float


def weighted_centi(weight: int, kw: float) -> int:
    """Weighted kW in exact hundredths."""
    return int(round(weight * kw * 100))


def _score(centi: int, shed: bool) -> int:
    return centi * _VALUE_SHIFT - (_SHED_SHIFT if shed else 0) + 1


# ---------------------------------------------------------------------------
# Rounding and decomposition
# ---------------------------------------------------------------------------

def round_powers(region: SupplyRegion, loads: Dict[int, float],
                 granularity: float) -> RoundedPowers:
    """Floor the capacity and ceil every load to the granularity."""
    return RoundedPowers(
        granularity=granularity,
        capacity=from_units(units_down(region.capacity, granularity), granularity),
        loads={b: from_units(units_up(kw, granularity), granularity) for b, kw in loads.items()},
    )


def decompose_loads(net: Network, buses: Iterable[int], granularity: float = 1.0) -> List[LoadSplit]:
    """Split each bus load into its reducible and fixed parts.

    The fixed part is ceiled and the reducible part takes the remainder of
    the ceiled total, so the two always add up to the rounded load.
    """
    splits = []
    for bus_id in sorted(set(buses)):
        bus = net.bus(bus_id)
        fraction = bus.controllable_fraction
        nominal_fixed = bus.load_active * (1.0 - fraction)
        total_units = units_up(bus.load_active, granularity)
        fixed_units = min(units_up(nominal_fixed, granularity), total_units)
        splits.append(
            LoadSplit(
                bus=bus_id,
                reducible=from_units(total_units - fixed_units, granularity),
                fixed=from_units(fixed_units, granularity),
                nominal_reducible=bus.load_active * fraction,
                nominal_fixed=nominal_fixed,
            )
        )
    return splits


# ---------------------------------------------------------------------------
# Layering
# ---------------------------------------------------------------------------

def bfs_layers(net: Network, region: SupplyRegion) -> LayeredRegion:
    """Layer the region by hop distance from its roots.

    A bus equidistant from two parents takes the one with the lower id.

    Raises:
        RegionError: If roots are outside the member set or members are disconnected.
    """
    members = region.members
    roots = sorted(region.root_buses)
    outside = [r for r in roots if r not in members]
    if outside:
        raise RegionError(f"Root buses {outside} are not members of the region.")
    adjacency = closed_adjacency(net)

    seen: Set[int] = set(roots)
    parent: Dict[int, int] = {}
    layers = [roots]
    layer = roots
    while layer:
        nxt: Dict[int, int] = {}
        for bus_id in layer:
            for neighbour in adjacency[bus_id]:
                if neighbour in members and neighbour not in seen:
                    nxt[neighbour] = min(nxt.get(neighbour, bus_id), bus_id)
        seen |= set(nxt)
        parent.update(nxt)
        layer = sorted(nxt)
        if layer:
            layers.append(layer)

    if len(seen) != len(members):
        missing = sorted(members - seen)
        raise RegionError(
            f"Region [{region.label()}] is disconnected: buses {missing[:10]} cannot be "
            "reached from its roots over closed branches.",
            module="partition_solver",
        )
    return LayeredRegion(root_buses=frozenset(roots), layers=layers, parent=parent)


def root_connection(net: Network, region: SupplyRegion) -> Set[int]:
    """Non-root buses on the paths joining the region's roots."""
    roots = sorted(region.root_buses)
    if len(roots) < 2:
        return set()
    adjacency = closed_adjacency(net)
    anchor = roots[0]
    parent: Dict[int, Optional[int]] = {anchor: None}
    queue = [anchor]
    while queue:
        node = queue.pop()
        for neighbour in adjacency[node]:
            if neighbour in region.members and neighbour not in parent:
                parent[neighbour] = node
                queue.append(neighbour)
    on_path: Set[int] = set()
    for root in roots[1:]:
        node = parent.get(root)
        while node is not None:
            on_path.add(node)
            node = parent[node]
    return on_path - set(roots)


# ---------------------------------------------------------------------------
# Tree knapsack
# ---------------------------------------------------------------------------

class _Problem:
    """Per-region data shared by the knapsack runs of one solve."""

    def __init__(self, net: Network, region: SupplyRegion):
        if region.size > MAX_REGION_BUSES:
            raise RegionError(
                f"Region [{region.label()}] has {region.size} buses; the solver supports "
                f"at most {MAX_REGION_BUSES} per region.",
                module="partition_solver",
            )
        self.net = net
        self.region = region
        self.granularity = region.granularity
        self.capacity = units_down(region.capacity, self.granularity)
        if self.capacity > MAX_CAPACITY_STEPS:
            coarsest = region.capacity / MAX_CAPACITY_STEPS
            raise RegionError(
                f"Region [{region.label()}] has {region.capacity:.1f} kW of capacity, which is "
                f"{self.capacity} steps of {self.granularity:g} kW; the solver supports at most "
                f"{MAX_CAPACITY_STEPS} steps per region. Use --granularity {coarsest:.3g} or larger.",
                module="partition_solver",
            )
        self.layered = bfs_layers(net, region)
        self.children = self.layered.children()
        self.splits = {s.bus: s for s in decompose_loads(net, region.members, self.granularity)}
        self.connection = root_connection(net, region)
        self.options = {b: self._bus_options(b) for b in region.members}

    def fixed_units(self, bus: int) -> int:
        return units_up(self.splits[bus].fixed, self.granularity)

    def full_units(self, bus: int) -> int:
        return units_up(self.splits[bus].total, self.granularity)

    def _bus_options(self, bus_id: int) -> List[_Option]:
        bus = self.net.bus(bus_id)
        split = self.splits[bus_id]
        full = _Option(
            units=self.full_units(bus_id),
            centi=weighted_centi(bus.weight, split.nominal_total),
            shed=False,
            served_kw=split.nominal_total,
        )
        options = [full]
        if split.reducible > 0:
            options.append(
                _Option(
                    units=self.fixed_units(bus_id),
                    centi=weighted_centi(bus.weight, split.nominal_fixed),
                    shed=True,
                    served_kw=split.nominal_fixed,
                )
            )
        if bus_id in self.region.unrestorable:
            options.append(_Option(units=0, centi=0, shed=bus.load_active > 0, served_kw=0.0))
        return options

    def base_commitments(self) -> Dict[int, int]:
        return {b: self.fixed_units(b) for b in self.connection}

    def required_units(self, committed: Dict[int, int]) -> int:
        """Units the commitments need, roots always serving at least their fixed load."""
        roots = sum(
            self.fixed_units(r) for r in self.layered.root_buses
            if r not in committed and r not in self.region.unrestorable
        )
        return sum(committed.values()) + roots

    def solve(self, committed: Dict[int, int]) -> Optional[Dict[int, _Option]]:
        """Best option per energized bus, or None when the commitments cannot be met.

        After the knapsack, buses are visited in id order and each is kept
        energized whenever the best score survives it, which picks the lexicographically
        smallest energized set among the equally ranked selections.
        """
        found = self._best(committed, set())
        if found is None:
            return None
        score, selection = found
        forced = dict(committed)
        excluded: Set[int] = set()
        for bus_id in sorted(self.region.members):
            if bus_id in forced or bus_id in self.layered.root_buses:
                continue
            if self.layered.parent.get(bus_id) in excluded:
                excluded.add(bus_id)
                continue
            if bus_id in selection:
                forced[bus_id] = 0
                continue
            trial = self._best({**forced, bus_id: 0}, excluded)
            if trial is not None and trial[0] == score:
                forced[bus_id] = 0
                selection = trial[1]
            else:
                excluded.add(bus_id)
        return selection

    def _best(self, committed: Dict[int, int],
              excluded: Set[int]) -> Optional[Tuple[int, Dict[int, _Option]]]:
        cap = self.capacity
        forced = set(committed) | set(self.layered.root_buses)
        must: Dict[int, bool] = {}
        for bus_id in reversed(self.layered.order()):
            must[bus_id] = bus_id in forced or any(must[c] for c in self.children[bus_id])

        tables: Dict[int, np.ndarray] = {}
        picks: Dict[int, Tuple[np.ndarray, List[Tuple[int, np.ndarray]]]] = {}
        for bus_id in reversed(self.layered.order()):
            table = np.full(cap + 1, _NEG, dtype=np.int64)
            chosen = np.full(cap + 1, -1, dtype=np.int64)
            floor = committed.get(bus_id, 0)
            for k, option in enumerate(self.options[bus_id]):
                if bus_id in excluded or option.units < floor or option.units > cap:
                    continue
                score = _score(option.centi, option.shed)
                if score > table[option.units]:
                    table[option.units] = score
                    chosen[option.units] = k
            merges = []
            for child in self.children[bus_id]:
                table, pick = _merge(table, tables.pop(child), must[child], cap)
                merges.append((child, pick))
            tables[bus_id] = table
            picks[bus_id] = (chosen, merges)

        # virtual super-root joining all DG buses
        total = np.zeros(cap + 1, dtype=np.int64)
        total[1:] = _NEG
        root_merges = []
        for root in sorted(self.layered.root_buses):
            total, pick = _merge(total, tables.pop(root), True, cap)
            root_merges.append((root, pick))
        if total.max() <= _INFEASIBLE:
            return None

        best_units = int(np.argmax(total))
        selection: Dict[int, _Option] = {}
        stack: List[Tuple[int, int]] = []
        remaining = best_units
        for root, pick in reversed(root_merges):
            used = int(pick[remaining])
            stack.append((root, used))
            remaining -= used
        while stack:
            bus_id, units = stack.pop()
            chosen, merges = picks[bus_id]
            for child, pick in reversed(merges):
                used = int(pick[units])
                if used >= 0:
                    stack.append((child, used))
                    units -= used
            selection[bus_id] = self.options[bus_id][int(chosen[units])]
        return int(total[best_units]), selection

    def to_island(self, selection: Dict[int, _Option]) -> Island:
        restored = {}
        shed = {}
        for bus_id, option in sorted(selection.items()):
            restored[bus_id] = round(option.served_kw, 6)
            if option.shed:
                shed[bus_id] = round(self.net.bus(bus_id).load_active - option.served_kw, 6)
        units = sum(option.units for option in selection.values())
        return Island(
            dgs=self.region.dgs,
            root_buses=self.region.root_buses,
            capacity=self.region.capacity,
            energized=frozenset(selection),
            restored_kw=restored,
            shed_kw=shed,
            objective=sum(option.centi for option in selection.values()) / 100,
            rounded_load=from_units(units, self.granularity),
            granularity=self.granularity,
        )

    def optimum(self, committed: Dict[int, int]) -> Optional[int]:
        found = self._best(committed, set())
        if found is None:
            return None
        return sum(option.centi for option in found[1].values())


def _merge(table: np.ndarray, child: np.ndarray, child_required: bool,
           cap: int) -> Tuple[np.ndarray, np.ndarray]:
    """Knapsack convolution of a parent table with one child subtree table.

    Returns the merged table and, per merged index, the child's share of
    capacity (-1 when the child stays off).
    """
    if child_required:
        merged = np.full(cap + 1, _NEG, dtype=np.int64)
    else:
        merged = table.copy()
    pick = np.full(cap + 1, -1, dtype=np.int64)
    for used in np.flatnonzero(child > _INFEASIBLE):
        used = int(used)
        candidate = table[: cap + 1 - used] + child[used]
        target = merged[used:]
        better = candidate > target
        target[better] = candidate[better]
        pick[used:][better] = used
    merged[merged <= _INFEASIBLE] = _NEG
    return merged, pick


# ---------------------------------------------------------------------------
# Region correction
# ---------------------------------------------------------------------------

def region_correction(net: Network, region: SupplyRegion, min_buses: int = 0) -> SupplyRegion:
    """Commit critical loads and their supply paths before optimisation.

    Stage 1 commits every Primary bus at full load with its path to the
    nearest root, shedding and then dropping Primary buses until the
    commitments fit. Stage 2 commits every Secondary bus when they all fit.
    Otherwise stage 3 walks the hop rings and keeps a ring's Secondary
    buses only when the optimum with them committed does not drop. A
    commitment only narrows the knapsack, so a ring that holds the
    optimum level is kept.

    Root buses are always energized, so their fixed load is counted
    against the capacity in every stage.

    Raises:
        InfeasibleCommitmentError: If the buses joining the roots cannot be served.
    """
    problem = _Problem(net, region)
    g = problem.granularity
    cap = problem.capacity
    base = problem.base_commitments()
    if problem.required_units(base) > cap:
        raise _infeasible(region, base, g, problem.required_units(base))

    if region.size < min_buses:
        logger.info("Region [%s] below correction threshold; skipping", region.label())
        return region.model_copy(update={"committed": _to_kw(base, g)})

    def commit(full: Iterable[int], shed: Set[int] = frozenset()) -> Dict[int, int]:
        result = dict(base)
        for bus_id in full:
            level = problem.fixed_units(bus_id) if bus_id in shed else problem.full_units(bus_id)
            result[bus_id] = max(result.get(bus_id, 0), level)
            for ancestor in problem.layered.path_to_root(bus_id):
                result[ancestor] = max(result.get(ancestor, 0), problem.fixed_units(ancestor))
        return result

    def fits(commitments: Dict[int, int]) -> bool:
        return problem.required_units(commitments) <= cap

    def of_priority(priority: Priority) -> List[int]:
        return [
            b for b in sorted(region.members)
            if net.bus(b).priority == priority
            and net.bus(b).load_active > 0
            and b not in region.unrestorable
        ]

    # Stage 1: primary loads and their paths
    active = of_priority(Priority.PRIMARY)
    shed: Set[int] = set()
    dropped: List[int] = []
    committed = commit(active, shed)
    while not fits(committed):
        reducible = [
            b for b in active
            if b not in shed and problem.splits[b].reducible > 0
        ]
        if reducible:
            victim = min(
                reducible,
                key=lambda b: (net.bus(b).weight, -problem.splits[b].reducible, b),
            )
            shed.add(victim)
        else:
            victim = min(active, key=lambda b: (problem.full_units(b), b))
            active.remove(victim)
            shed.discard(victim)
            dropped.append(victim)
            logger.warning(
                "Region [%s]: primary bus %d dropped, commitments exceed %.1f kW",
                region.label(), victim, region.capacity,
            )
        committed = commit(active, shed)

    for bus_id in sorted(shed):
        if fits(commit(active, shed - {bus_id})):
            shed.discard(bus_id)
    for bus_id in sorted(dropped, key=lambda b: (problem.full_units(b), b)):
        if fits(commit(active + [bus_id], shed)):
            active.append(bus_id)
        elif problem.splits[bus_id].reducible > 0 and fits(commit(active + [bus_id], shed | {bus_id})):
            active.append(bus_id)
            shed.add(bus_id)
    committed = commit(active, shed)
    logger.info(
        "Region [%s] stage 1: %d primary bus(es) committed, %d shed, %d dropped",
        region.label(), len(active), len(shed), len(set(dropped) - set(active)),
    )

    # Stage 2: all secondary loads at once
    secondary = [
        b for b in of_priority(Priority.SECONDARY)
        if committed.get(b, -1) < problem.full_units(b)
    ]
    if not secondary:
        return region.model_copy(update={"committed": _to_kw(committed, g)})
    everything = _merge_commitments(committed, commit(secondary))
    if fits(everything):
        logger.info("Region [%s] stage 2: all %d secondary bus(es) fit", region.label(), len(secondary))
        return region.model_copy(update={"committed": _to_kw(everything, g)})

    # Stage 3: ring by ring
    best = problem.optimum(committed)
    if best is None:
        raise _infeasible(region, committed, g, problem.required_units(committed))
    depth = problem.layered.depth()
    for ring in range(len(problem.layered.layers)):
        candidates = [
            b for b in secondary
            if depth[b] == ring and committed.get(b, -1) < problem.full_units(b)
        ]
        if not candidates:
            continue
        trial = _merge_commitments(committed, commit(candidates))
        if not fits(trial):
            logger.debug("Ring %d candidates %s exceed capacity", ring, candidates)
            continue
        value = problem.optimum(trial)
        if value is not None and value >= best:
            committed = trial
            best = value
            logger.debug("Ring %d candidates %s kept", ring, candidates)
        else:
            logger.debug("Ring %d candidates %s lower the optimum", ring, candidates)

    return region.model_copy(update={"committed": _to_kw(committed, g)})


def _merge_commitments(a: Dict[int, int], b: Dict[int, int]) -> Dict[int, int]:
    merged = dict(a)
    for bus_id, units in b.items():
        merged[bus_id] = max(merged.get(bus_id, 0), units)
    return merged


def _to_kw(committed: Dict[int, int], granularity: float) -> Dict[int, float]:
    return {b: from_units(u, granularity) for b, u in sorted(committed.items())}


def _infeasible(region: SupplyRegion, committed: Dict[int, int], granularity: float,
                units: int) -> InfeasibleCommitmentError:
    required = from_units(units, granularity)
    return InfeasibleCommitmentError(
        f"Region [{region.label()}] must serve {required:.1f} kW on buses "
        f"{sorted(committed)[:12]} but only {region.capacity:.1f} kW is available. "
        "Lower the granularity, disable correction with --no-correction, "
        "or check the DG forecasts.",
        required_kw=required,
        capacity_kw=region.capacity,
    )


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------

def solve_partition(net: Network, region: SupplyRegion) -> Island:
    """Optimal island of ``region`` under its capacity and commitments.

    Raises:
        InfeasibleCommitmentError: If the committed loads cannot be served together.
    """
    problem = _Problem(net, region)
    g = problem.granularity
    committed = _merge_commitments(
        problem.base_commitments(),
        {b: units_up(kw, g) for b, kw in region.committed.items()},
    )
    selection = problem.solve(committed)
    if selection is None:
        raise _infeasible(region, committed, g, problem.required_units(committed))
    island = problem.to_island(selection)
    logger.info(
        "Island [%s]: %d bus(es) energized, %.2f kW restored, objective %.2f",
        region.label(), len(island.energized), island.total_restored, island.objective,
    )
    return island


def objective_value(island: Island, net: Network) -> float:
    """Weighted restored load of an island."""
    return sum(
        weighted_centi(net.bus(b).weight, kw) for b, kw in island.restored_kw.items()
    ) / 100
