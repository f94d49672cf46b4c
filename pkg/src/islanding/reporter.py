"""Partition report model and its table, JSON and DOT renderings."""

from __future__ import annotations

import io
import json
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, Field
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from src.islanding.feasibility import ConstraintViolation, FlowSolution
from src.islanding.grid_model import Network, Priority, totals_by_level
from src.islanding.partition_solver import Island
from src.islanding.power_circle import SupplyRegion

SCHEMA_VERSION = "1"
FORMATS = ("table", "json", "dot")


class FlowSummary(BaseModel):
    converged: bool
    iterations: int
    min_voltage_pu: float
    max_voltage_pu: float
    losses_kw: float

    @classmethod
    def from_solution(cls, sol: FlowSolution) -> "FlowSummary":
        return cls(
            converged=sol.converged,
            iterations=sol.iterations,
            min_voltage_pu=sol.min_voltage,
            max_voltage_pu=sol.max_voltage,
            losses_kw=sol.losses_kw,
        )


class IslandSummary(BaseModel):
    """One island as it appears in a report."""

    id: int
    dgs: List[str]
    capacity_kw: float
    energized: List[int]
    restored_kw: Dict[int, float] = Field(default_factory=dict)
    shed_kw: Dict[int, float] = Field(default_factory=dict)
    objective: float = 0.0
    restored_by_level: Dict[str, float] = Field(default_factory=dict)
    flow: Optional[FlowSummary] = None


class LevelRestoration(BaseModel):
    total_kw: float
    restored_kw: float
    ratio_pct: int


class PartitionReport(BaseModel):
    """Outcome of one islanding run."""

    case: str = ""
    scenario: List[Tuple[int, int]] = Field(default_factory=list)
    granularity: float = 1.0
    grid_connected_dgs: List[str] = Field(default_factory=list)
    islands: List[IslandSummary] = Field(default_factory=list)
    per_level: Dict[str, LevelRestoration] = Field(default_factory=dict)
    violations: List[ConstraintViolation] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)

    @property
    def objective(self) -> float:
        return round(sum(i.objective for i in self.islands), 4)

    @property
    def exit_code(self) -> int:
        return 2 if self.violations else 0


def ratio_percent(restored: float, total: float) -> int:
    """Restored share of a level, rounded half-up to a whole percent."""
    if total <= 0:
        return 0
    ratio = Decimal(repr(restored)) * 100 / Decimal(repr(total))
    return int(ratio.quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def summarize_island(net: Network, island: Island, number: int,
                     flow: Optional[FlowSolution] = None) -> IslandSummary:
    by_level = {p.value: 0.0 for p in Priority}
    for bus_id, kw in island.restored_kw.items():
        by_level[net.bus(bus_id).priority.value] += kw
    return IslandSummary(
        id=number,
        dgs=sorted(island.dgs),
        capacity_kw=island.capacity,
        energized=sorted(island.energized),
        restored_kw=dict(sorted(island.restored_kw.items())),
        shed_kw=dict(sorted(island.shed_kw.items())),
        objective=island.objective,
        restored_by_level={k: round(v, 6) for k, v in by_level.items()},
        flow=FlowSummary.from_solution(flow) if flow is not None else None,
    )


def build_report(net: Network, scenario: Iterable[Tuple[int, int]], islands: List[Island],
                 flows: Optional[List[Optional[FlowSolution]]] = None,
                 violations: Optional[List[ConstraintViolation]] = None,
                 grid_connected_dgs: Optional[List[str]] = None,
                 granularity: float = 1.0, notes: Optional[List[str]] = None) -> PartitionReport:
    """Assemble a report; per-level totals come from the whole network."""
    flows = flows or [None] * len(islands)
    summaries = [
        summarize_island(net, island, k, flow)
        for k, (island, flow) in enumerate(zip(islands, flows), start=1)
    ]
    totals = totals_by_level(net)
    per_level = {}
    for priority in Priority:
        restored = round(sum(s.restored_by_level[priority.value] for s in summaries), 6)
        per_level[priority.value] = LevelRestoration(
            total_kw=totals[priority],
            restored_kw=restored,
            ratio_pct=ratio_percent(restored, totals[priority]),
        )
    return PartitionReport(
        case=net.name,
        scenario=[tuple(f) for f in scenario],
        granularity=granularity,
        grid_connected_dgs=sorted(grid_connected_dgs or []),
        islands=summaries,
        per_level=per_level,
        violations=list(violations or []),
        notes=list(notes or []),
    )


def _rounded(value: Any) -> Any:
    if isinstance(value, float):
        return round(value, 4)
    if isinstance(value, dict):
        return {str(k): _rounded(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_rounded(v) for v in value]
    return value


class Reporter:
    """Formats partition reports."""

    @staticmethod
    def to_dict(report: PartitionReport) -> Dict[str, Any]:
        data = report.model_dump(mode="python")
        data["scenario"] = [f"{a}-{b}" for a, b in report.scenario]
        data["objective"] = report.objective
        data["schema_version"] = SCHEMA_VERSION
        return _rounded(data)

    @staticmethod
    def to_json(report: PartitionReport, indent: int = 2) -> str:
        return json.dumps(Reporter.to_dict(report), indent=indent, sort_keys=True) + "\n"

    @staticmethod
    def to_table(report: PartitionReport, width: int = 120) -> str:
        buffer = io.StringIO()
        console = Console(file=buffer, width=width, force_terminal=False, color_system=None)

        scenario = ", ".join(f"{a}-{b}" for a, b in report.scenario) or "none"
        console.print(f"Case {report.case or '-'}  faults: {scenario}  granularity: {report.granularity:g} kW")

        islands = Table(title="Island division")
        islands.add_column("Island", justify="right")
        islands.add_column("DGs")
        islands.add_column("Energized buses")
        islands.add_column("Shed buses")
        islands.add_column("Restored kW", justify="right")
        islands.add_column("Objective", justify="right")
        for island in report.islands:
            islands.add_row(
                str(island.id),
                ", ".join(island.dgs),
                compress_ranges(island.energized),
                compress_ranges(sorted(b for b, kw in island.shed_kw.items() if kw > 0)) or "-",
                f"{sum(island.restored_kw.values()):.2f}",
                f"{island.objective:.1f}",
            )
        console.print(islands)

        levels = Table(title="Load restoration by level")
        levels.add_column("Level")
        levels.add_column("Total kW", justify="right")
        levels.add_column("Restored kW", justify="right")
        levels.add_column("Ratio %", justify="right")
        for name, row in report.per_level.items():
            levels.add_row(name, f"{row.total_kw:.2f}", f"{row.restored_kw:.2f}", str(row.ratio_pct))
        console.print(levels)

        console.print(f"Objective: {report.objective:.1f}")
        if report.grid_connected_dgs:
            console.print(f"Grid-connected DGs: {', '.join(report.grid_connected_dgs)}")
        for note in report.notes:
            console.print(f"Note: {escape(note)}")
        for violation in report.violations:
            console.print(f"Violation ({violation.kind}): {escape(violation.message)}")
        return buffer.getvalue()

    @staticmethod
    def to_dot(report: PartitionReport, net: Optional[Network] = None) -> str:
        clusters = [
            (f"island_{island.id}", f"Island {island.id}: {', '.join(island.dgs)}", island.energized)
            for island in report.islands
        ]
        return render_dot(report.case or "network", clusters, net)

    @staticmethod
    def emit(report: PartitionReport, fmt: str = "table", net: Optional[Network] = None) -> str:
        if fmt == "table":
            return Reporter.to_table(report)
        if fmt == "json":
            return Reporter.to_json(report)
        if fmt == "dot":
            return Reporter.to_dot(report, net)
        raise ValueError(f"Unsupported format: {fmt}. Supported formats: {', '.join(FORMATS)}")


def render_dot(name: str, clusters: List[Tuple[str, str, Iterable[int]]],
               net: Optional[Network] = None) -> str:
    """Undirected DOT graph with one cluster per bus group; faulted edges dashed."""
    lines = [f'graph "{name}" {{', "  node [shape=circle];"]
    clustered = set()
    for cluster_id, label, buses in clusters:
        buses = sorted(buses)
        clustered.update(buses)
        lines.append(f"  subgraph cluster_{cluster_id} {{")
        lines.append(f'    label="{label}";')
        for bus_id in buses:
            lines.append(f"    {bus_id};")
        lines.append("  }")
    if net is not None:
        for bus in net.buses:
            if bus.id not in clustered:
                lines.append(f"  {bus.id};")
        for branch in net.branches:
            style = "" if branch.closed else " [style=dashed]"
            lines.append(f"  {branch.from_bus} -- {branch.to_bus}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def regions_dot(net: Network, regions: List[SupplyRegion]) -> str:
    clusters = [
        (f"region_{k}", f"Region {k}: {region.label()}", region.members)
        for k, region in enumerate(regions, start=1)
    ]
    return render_dot(net.name or "network", clusters, net)


def compress_ranges(buses: Iterable[int]) -> str:
    """Render sorted bus ids as ``4-9, 36-37``."""
    ordered = sorted(set(buses))
    parts = []
    start = prev = None
    for bus_id in ordered:
        if start is None:
            start = prev = bus_id
        elif bus_id == prev + 1:
            prev = bus_id
        else:
            parts.append(f"{start}-{prev}" if prev != start else str(start))
            start = prev = bus_id
    if start is not None:
        parts.append(f"{start}-{prev}" if prev != start else str(start))
    return ", ".join(parts)


def expand_ranges(text: str) -> List[int]:
    """Inverse of :func:`compress_ranges`; accepts ``,`` or whitespace separators."""
    buses: List[int] = []
    for token in text.replace(",", " ").split():
        if "-" in token:
            low, high = token.split("-", 1)
            low_id, high_id = int(low), int(high)
            if high_id < low_id:
                raise ValueError(f"Range '{token}' runs backwards")
            buses.extend(range(low_id, high_id + 1))
        else:
            buses.append(int(token))
    return sorted(set(buses))
