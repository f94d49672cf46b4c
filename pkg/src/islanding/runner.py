"""Pipeline orchestration.

Runs reachability, supply-region search, region correction, the tree
knapsack and the flow checks for every supply region of a fault scenario,
and scores user-supplied partitions on the same data.
"""

import asyncio
import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
from pydantic import BaseModel, Field

from src.islanding.errors import ConvergenceError
from src.islanding.feasibility import (
    ConstraintViolation,
    FlowSolution,
    check_constraints,
    solve_flow,
)
from src.islanding.grid_model import (
    Network,
    apply_faults,
    closed_adjacency,
    from_units,
    load_case,
    to_graph,
    units_down,
    units_up,
)
from src.islanding.oracle import ORACLE_HARD_LIMIT, brute_force_partition
from src.islanding.partition_solver import (
    Island,
    decompose_loads,
    region_correction,
    solve_partition,
    weighted_centi,
)
from src.islanding.power_circle import SupplyRegion, max_supply_regions, stable_output
from src.islanding.reachability import (
    ReachableRegion,
    grid_connected_dgs,
    regions,
)
from src.islanding.reporter import PartitionReport, Reporter, build_report, expand_ranges

logger = logging.getLogger(__name__)

NO_ISLANDING_NOTE = "no islanding required"


class RunSettings(BaseModel):
    """Flattened solver and flow settings, as produced by ConfigMerger.merge."""

    granularity: float = Field(1.0, gt=0)
    correction: bool = True
    correction_min_buses: int = Field(0, ge=0)
    sigma_multiplier: float = Field(1.0, ge=0)
    oracle: bool = False
    oracle_max_buses: int = Field(12, ge=1, le=ORACLE_HARD_LIMIT)
    workers: int = Field(4, ge=1)
    tolerance: float = Field(1e-6, gt=0)
    max_iterations: int = Field(100, ge=1)
    umin: Optional[float] = None
    umax: Optional[float] = None

    model_config = {"extra": "ignore"}


class RegionOutcome(BaseModel):
    """Solved island of one supply region with its checks."""

    region: SupplyRegion
    island: Island
    flow: Optional[FlowSolution] = None
    violations: List[ConstraintViolation] = Field(default_factory=list)


class IslandSpec(BaseModel):
    """A user-supplied island: DG ids and the buses they serve."""

    dgs: List[str]
    buses: List[int]

    @classmethod
    def parse(cls, text: str) -> "IslandSpec":
        """Parse ``"DG1,DG4=4-9,36-37,40-41"``."""
        if "=" not in text:
            raise ValueError(
                f"Invalid island '{text}'. Expected 'DG1,DG4=4-9,36-37' "
                "(DG ids, '=', then bus ids and ranges)."
            )
        dg_part, bus_part = text.split("=", 1)
        dgs = [d for d in re.split(r"[,\s]+", dg_part.strip()) if d]
        if not dgs:
            raise ValueError(f"Island '{text}' names no DG")
        try:
            buses = expand_ranges(bus_part)
        except ValueError as e:
            raise ValueError(f"Invalid bus list in island '{text}': {e}")
        return cls(dgs=dgs, buses=buses)


def _violation(kind: str, element: str, value: float, limit: float, message: str) -> ConstraintViolation:
    return ConstraintViolation(kind=kind, element=element, value=value, limit=limit, message=message)


class PartitionRunner:
    """Orchestrates one islanding run."""

    def __init__(self, settings: Optional[RunSettings] = None):
        self.settings = settings or RunSettings()

    def prepare(self, case: Union[str, Path, Network],
                faults: Sequence[Tuple[int, int]] = ()) -> Network:
        """Load the case (if given as a path) and open the faulted branches."""
        net = case if isinstance(case, Network) else load_case(case)
        return apply_faults(net, list(faults))

    def supply_regions(self, net: Network) -> Tuple[List[ReachableRegion], List[SupplyRegion]]:
        """Reachable regions and the final supply regions of every islanding candidate."""
        found = regions(net)
        supply: List[SupplyRegion] = []
        for region in found:
            if region.contains_slack or not region.dgs:
                continue
            supply.extend(
                max_supply_regions(
                    net, region,
                    granularity=self.settings.granularity,
                    sigma_multiplier=self.settings.sigma_multiplier,
                )
            )
        return found, supply

    def solve_region(self, net: Network, region: SupplyRegion) -> RegionOutcome:
        """Correct, solve and check one supply region."""
        s = self.settings
        if s.correction:
            corrected = region_correction(net, region, min_buses=s.correction_min_buses)
        else:
            corrected = region_correction(net, region, min_buses=region.size + 1)
        island = solve_partition(net, corrected)

        violations: List[ConstraintViolation] = []
        flow = solve_flow(
            net, island, tolerance=s.tolerance, max_iterations=s.max_iterations,
            raise_on_failure=False,
        )
        if not flow.converged:
            violations.append(
                _violation(
                    "convergence", f"island {region.label()}", flow.trace[-1] if flow.trace else 0.0,
                    s.tolerance,
                    f"Power flow of island [{region.label()}] did not converge in "
                    f"{s.max_iterations} iterations",
                )
            )
        violations.extend(check_constraints(net, flow, umin=s.umin, umax=s.umax))

        if s.oracle and region.size <= s.oracle_max_buses:
            certified = brute_force_partition(net, corrected, max_buses=s.oracle_max_buses)
            if round(certified.best_objective * 100) != round(island.objective * 100):
                violations.append(
                    _violation(
                        "oracle", f"island {region.label()}", island.objective,
                        certified.best_objective,
                        f"Knapsack objective {island.objective:.2f} differs from the "
                        f"enumerated optimum {certified.best_objective:.2f}",
                    )
                )
            else:
                logger.info(
                    "Region [%s] certified by enumeration (%d assignments)",
                    region.label(), certified.states_explored,
                )
        return RegionOutcome(region=corrected, island=island, flow=flow, violations=violations)

    async def solve_regions(self, net: Network, supply: List[SupplyRegion]) -> List[RegionOutcome]:
        """Solve independent regions concurrently, results in region order."""
        semaphore = asyncio.Semaphore(self.settings.workers)

        async def solve_with_index(idx: int, region: SupplyRegion):
            async with semaphore:
                outcome = await asyncio.to_thread(self.solve_region, net, region)
                return idx, outcome

        tasks = [asyncio.create_task(solve_with_index(i, r)) for i, r in enumerate(supply)]
        results: List[Optional[RegionOutcome]] = [None] * len(supply)
        try:
            for idx, outcome in await asyncio.gather(*tasks):
                results[idx] = outcome
        except BaseException:
            for task in tasks:
                task.cancel()
            await asyncio.gather(*tasks, return_exceptions=True)
            raise
        return results

    async def run(self, case: Union[str, Path, Network],
                  faults: Sequence[Tuple[int, int]] = ()) -> PartitionReport:
        """Run the full pipeline on a fault scenario.

        Raises:
            FileNotFoundError: If the case file does not exist.
            IslandingError: On invalid cases, unknown faults or infeasible commitments.
        """
        faults = [tuple(f) for f in faults]
        net = self.prepare(case, faults)
        found, supply = self.supply_regions(net)
        notes: List[str] = []
        if not supply:
            notes.append(NO_ISLANDING_NOTE)
            logger.info("No off-grid region holds a DG; %s", NO_ISLANDING_NOTE)

        outcomes = await self.solve_regions(net, supply)
        violations = [v for o in outcomes for v in o.violations]
        return build_report(
            net,
            faults,
            [o.island for o in outcomes],
            flows=[o.flow for o in outcomes],
            violations=violations,
            grid_connected_dgs=grid_connected_dgs(net, found),
            granularity=self.settings.granularity,
            notes=notes,
        )

    def run_sync(self, case: Union[str, Path, Network],
                 faults: Sequence[Tuple[int, int]] = ()) -> PartitionReport:
        return asyncio.run(self.run(case, faults))

    @staticmethod
    def save_report(report: PartitionReport, output_dir: Union[str, Path],
                    indent: int = 2) -> Path:
        """Write the JSON report as ``<case>_<faults>.json`` under ``output_dir``."""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        scenario = "_".join(f"{a}-{b}" for a, b in report.scenario) or "intact"
        output_path = output_dir / f"{report.case or 'case'}_{scenario}.json"
        output_path.write_text(Reporter.to_json(report, indent=indent), encoding="utf-8")
        return output_path


# ---------------------------------------------------------------------------
# Evaluation of given partitions
# ---------------------------------------------------------------------------

def _attach_shed(net: Network, specs: List[IslandSpec], shed: Sequence[int]) -> List[set]:
    """Energized bus sets per island; each shed bus joins the island it touches."""
    energized = []
    for spec in specs:
        buses = set(spec.buses)
        buses.update(net.dg(d).bus for d in spec.dgs)
        energized.append(buses)
    adjacency = closed_adjacency(net)
    pending = sorted(set(shed) - set().union(*energized))
    while pending:
        progressed = False
        for bus_id in list(pending):
            owners = [k for k, buses in enumerate(energized)
                      if any(n in buses for n in adjacency[bus_id])]
            if owners:
                energized[owners[0]].add(bus_id)
                pending.remove(bus_id)
                progressed = True
        if not progressed:
            raise ValueError(
                f"Shed buses {pending} are not adjacent to any island. "
                "List them inside an --island range or remove them from --shed."
            )
    return energized


def evaluate_partition(net: Network, specs: List[IslandSpec], shed: Sequence[int] = (),
                       settings: Optional[RunSettings] = None,
                       scenario: Sequence[Tuple[int, int]] = ()) -> PartitionReport:
    """Score a given partition on the same data and rules as the solver.

    Buses in ``shed`` are energized but serve only their fixed load.
    Capacity and connectivity failures become report violations.
    """
    settings = settings or RunSettings()
    g = settings.granularity
    shed_set = set(shed)
    for bus_id in sorted(shed_set):
        if not net.has_bus(bus_id):
            raise ValueError(f"Shed bus {bus_id} does not exist in case '{net.name}'")
    for spec in specs:
        for bus_id in spec.buses:
            if not net.has_bus(bus_id):
                raise ValueError(
                    f"Island [{', '.join(spec.dgs)}] lists bus {bus_id}, which does not exist "
                    f"in case '{net.name}'"
                )
        unknown = [d for d in spec.dgs if d not in {dg.id for dg in net.dgs}]
        if unknown:
            raise ValueError(
                f"Unknown DG id(s) {unknown} in case '{net.name}'. "
                f"Known DGs: {', '.join(dg.id for dg in net.dgs)}"
            )
    energized_sets = _attach_shed(net, specs, shed_set)

    graph = to_graph(net)
    islands: List[Island] = []
    flows: List[Optional[FlowSolution]] = []
    violations: List[ConstraintViolation] = []
    seen: Dict[int, str] = {}

    for spec, energized in zip(specs, energized_sets):
        label = ", ".join(sorted(spec.dgs))
        for bus_id in sorted(energized):
            if bus_id in seen:
                violations.append(
                    _violation("connectivity", f"bus {bus_id}", 0.0, 0.0,
                               f"Bus {bus_id} belongs to islands [{seen[bus_id]}] and [{label}]")
                )
            seen[bus_id] = label

        capacity = sum(stable_output(net.dg(d), g, settings.sigma_multiplier) for d in spec.dgs)
        restored: Dict[int, float] = {}
        shed_kw: Dict[int, float] = {}
        units = 0
        centi = 0
        for split in decompose_loads(net, energized, g):
            bus = net.bus(split.bus)
            if split.bus in shed_set:
                served, used = split.nominal_fixed, units_up(split.fixed, g)
                if split.nominal_reducible > 0:
                    shed_kw[split.bus] = round(split.nominal_reducible, 6)
            else:
                served, used = split.nominal_total, units_up(split.total, g)
            restored[split.bus] = round(served, 6)
            units += used
            centi += weighted_centi(bus.weight, served)

        island = Island(
            dgs=frozenset(spec.dgs),
            root_buses=frozenset(net.dg(d).bus for d in spec.dgs),
            capacity=capacity,
            energized=frozenset(energized),
            restored_kw=restored,
            shed_kw=shed_kw,
            objective=centi / 100,
            rounded_load=from_units(units, g),
            granularity=g,
        )
        islands.append(island)

        if units > units_down(capacity, g):
            violations.append(
                _violation("capacity", f"island {label}", island.rounded_load, capacity,
                           f"Island [{label}] needs {island.rounded_load:.1f} kW but its DGs "
                           f"supply {capacity:.1f} kW")
            )
        if not nx.is_connected(graph.subgraph(energized)):
            violations.append(
                _violation("connectivity", f"island {label}", 0.0, 0.0,
                           f"Island [{label}] is not connected over closed branches")
            )
            flows.append(None)
            continue
        try:
            flow = solve_flow(net, island, tolerance=settings.tolerance,
                              max_iterations=settings.max_iterations)
        except ConvergenceError as e:
            violations.append(
                _violation("convergence", f"island {label}", e.trace[-1] if e.trace else 0.0,
                           settings.tolerance, e.message)
            )
            flows.append(None)
            continue
        flows.append(flow)
        violations.extend(check_constraints(net, flow, umin=settings.umin, umax=settings.umax))

    logger.info(
        "Evaluated %d island(s): objective %.1f, %d violation(s)",
        len(islands), sum(i.objective for i in islands), len(violations),
    )
    return build_report(
        net, scenario, islands, flows=flows, violations=violations,
        granularity=g, notes=["evaluated partition"],
    )

