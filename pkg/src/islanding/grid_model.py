"""Network data model, case-file parsing and fault injection.

A case file is line oriented text with ``#`` comments and four sections::

    [meta]   base_kv=12.66 slack=1 umin=0.95 umax=1.05
    [bus]    id  p_kw  q_kvar  priority{1|2|3}  controllable{0..1}
    [branch] from  to  r_ohm  x_ohm  [i_rated_a]  [faulted]
    [dg]     name  bus  rated_kw  predicted_kw  sigma_kw

Rows may follow a header on the same line or on the lines below it.
"""

from __future__ import annotations

import logging
import math
import re
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import networkx as nx
from pydantic import BaseModel, Field, field_validator, model_validator

from src.islanding.errors import CaseFileError, NetworkValidationError, UnknownBranchError

logger = logging.getLogger(__name__)

# Slack for float noise when snapping powers to the granularity grid.
_SNAP_EPS = 1e-9


class Priority(str, Enum):
    """Load priority levels."""

    PRIMARY = "primary"
    SECONDARY = "secondary"
    TERTIARY = "tertiary"

    @property
    def code(self) -> int:
        return _PRIORITY_CODES[self]

    @property
    def weight(self) -> int:
        return PRIORITY_WEIGHTS[self]

    @classmethod
    def from_code(cls, code: int) -> "Priority":
        for priority, value in _PRIORITY_CODES.items():
            if value == code:
                return priority
        raise ValueError(f"Unknown priority code {code}; expected 1, 2 or 3")


_PRIORITY_CODES: Dict[Priority, int] = {
    Priority.PRIMARY: 1,
    Priority.SECONDARY: 2,
    Priority.TERTIARY: 3,
}

PRIORITY_WEIGHTS: Dict[Priority, int] = {
    Priority.PRIMARY: 100,
    Priority.SECONDARY: 10,
    Priority.TERTIARY: 1,
}


class BranchStatus(str, Enum):
    CLOSED = "closed"
    FAULTED = "faulted"


class Bus(BaseModel):
    """A network node with its load and priority class."""

    model_config = {"frozen": True}

    id: int = Field(..., ge=1, description="1-based bus index")
    load_active: float = Field(0.0, ge=0, description="Active load in kW")
    load_reactive: float = Field(0.0, description="Reactive load in kVar")
    priority: Priority = Field(Priority.SECONDARY, description="Load priority class")
    controllable_fraction: float = Field(
        0.0, ge=0, le=1, description="Share of the load that may be shed"
    )

    @property
    def weight(self) -> int:
        return self.priority.weight


class Branch(BaseModel):
    """A line between two buses."""

    model_config = {"frozen": True}

    from_bus: int
    to_bus: int
    resistance: float = Field(0.0, ge=0, description="Series resistance in ohm")
    reactance: float = Field(0.0, description="Series reactance in ohm")
    rated_current: Optional[float] = Field(None, gt=0, description="Ampacity in A")
    status: BranchStatus = BranchStatus.CLOSED

    @property
    def key(self) -> Tuple[int, int]:
        """Endpoints as an ordered pair, independent of orientation."""
        return (min(self.from_bus, self.to_bus), max(self.from_bus, self.to_bus))

    @property
    def closed(self) -> bool:
        return self.status == BranchStatus.CLOSED

    def connects(self, a: int, b: int) -> bool:
        return self.key == (min(a, b), max(a, b))

    @property
    def label(self) -> str:
        return f"{self.from_bus}-{self.to_bus}"


class DistributedGenerator(BaseModel):
    """A DG with its forecast output and forecast deviation."""

    model_config = {"frozen": True}

    id: str
    bus: int
    rated_capacity: float = Field(..., ge=0, description="Rated capacity in kW")
    predicted_output: float = Field(..., ge=0, description="Forecast output in kW")
    sigma: float = Field(0.0, ge=0, description="Standard deviation of output in kW")

    @model_validator(mode="after")
    def _prediction_within_rating(self) -> "DistributedGenerator":
        if self.predicted_output > self.rated_capacity + _SNAP_EPS:
            raise ValueError(
                f"DG {self.id}: predicted output {self.predicted_output} kW exceeds "
                f"rated capacity {self.rated_capacity} kW"
            )
        return self


class Network(BaseModel):
    """An attributed distribution network.

    Instances are immutable; operations that change topology return copies.
    """

    model_config = {"frozen": True}

    name: str = ""
    buses: List[Bus] = Field(default_factory=list)
    branches: List[Branch] = Field(default_factory=list)
    dgs: List[DistributedGenerator] = Field(default_factory=list)
    slack_bus: int = 1
    base_voltage: float = Field(12.66, gt=0, description="Line-to-line base voltage in kV")
    voltage_limits: Tuple[float, float] = (0.95, 1.05)

    @field_validator("voltage_limits")
    @classmethod
    def _ordered_limits(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if value[0] > value[1]:
            raise ValueError(f"Voltage limits {value} are not ordered as (umin, umax)")
        return value

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    def bus(self, bus_id: int) -> Bus:
        if 1 <= bus_id <= len(self.buses) and self.buses[bus_id - 1].id == bus_id:
            return self.buses[bus_id - 1]
        for bus in self.buses:
            if bus.id == bus_id:
                return bus
        raise KeyError(bus_id)

    def has_bus(self, bus_id: int) -> bool:
        try:
            self.bus(bus_id)
        except KeyError:
            return False
        return True

    def dg(self, dg_id: str) -> DistributedGenerator:
        for dg in self.dgs:
            if dg.id == dg_id:
                return dg
        raise KeyError(dg_id)

    def branch_between(self, a: int, b: int) -> Optional[Branch]:
        for branch in self.branches:
            if branch.connects(a, b):
                return branch
        return None

    def closed_branches(self) -> List[Branch]:
        return [b for b in self.branches if b.closed]

    def faulted_branches(self) -> List[Branch]:
        return [b for b in self.branches if not b.closed]

    def total_load(self) -> float:
        return round(sum(b.load_active for b in self.buses), 6)

    def total_reactive_load(self) -> float:
        return round(sum(b.load_reactive for b in self.buses), 6)


# ---------------------------------------------------------------------------
# Granularity helpers
# ---------------------------------------------------------------------------

def units_up(value: float, granularity: float) -> int:
    """Number of granularity steps needed to cover ``value`` (ceiling)."""
    if granularity <= 0:
        raise ValueError(f"Granularity must be positive, got {granularity}")
    return max(0, math.ceil(value / granularity - _SNAP_EPS))


def units_down(value: float, granularity: float) -> int:
    """Number of whole granularity steps contained in ``value`` (floor)."""
    if granularity <= 0:
        raise ValueError(f"Granularity must be positive, got {granularity}")
    return max(0, math.floor(value / granularity + _SNAP_EPS))


def from_units(units: int, granularity: float) -> float:
    return round(units * granularity, 9)


# ---------------------------------------------------------------------------
# Topology helpers
# ---------------------------------------------------------------------------

def closed_adjacency(net: Network) -> Dict[int, List[int]]:
    """Neighbour lists over closed branches, sorted by bus id."""
    adjacency: Dict[int, List[int]] = {bus.id: [] for bus in net.buses}
    for branch in net.branches:
        if branch.closed:
            adjacency[branch.from_bus].append(branch.to_bus)
            adjacency[branch.to_bus].append(branch.from_bus)
    for neighbours in adjacency.values():
        neighbours.sort()
    return adjacency


def to_graph(net: Network, closed_only: bool = True) -> nx.Graph:
    """Build a networkx graph of the buses and (closed) branches."""
    graph = nx.Graph(name=net.name)
    for bus in net.buses:
        graph.add_node(bus.id, load=bus.load_active, priority=bus.priority.value)
    for branch in net.branches:
        if closed_only and not branch.closed:
            continue
        graph.add_edge(
            branch.from_bus,
            branch.to_bus,
            resistance=branch.resistance,
            reactance=branch.reactance,
            status=branch.status.value,
        )
    return graph


def hop_distances(adjacency: Dict[int, List[int]], origins: Iterable[int],
                  allowed: Optional[Iterable[int]] = None) -> Dict[int, int]:
    """Breadth-first hop distance from the nearest origin."""
    allowed_set = set(allowed) if allowed is not None else None
    distance: Dict[int, int] = {}
    queue: deque = deque()
    for origin in sorted(set(origins)):
        distance[origin] = 0
        queue.append(origin)
    while queue:
        node = queue.popleft()
        for neighbour in adjacency[node]:
            if neighbour in distance:
                continue
            if allowed_set is not None and neighbour not in allowed_set:
                continue
            distance[neighbour] = distance[node] + 1
            queue.append(neighbour)
    return distance


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_network(net: Network) -> Network:
    """Check the structural invariants of a case.

    Raises:
        NetworkValidationError: naming the first offending entity.
    """
    ids = [bus.id for bus in net.buses]
    seen = set()
    for bus_id in ids:
        if bus_id in seen:
            raise NetworkValidationError(
                f"Duplicate bus id {bus_id}. Each [bus] row needs a unique id."
            )
        seen.add(bus_id)
    if sorted(ids) != list(range(1, len(ids) + 1)):
        missing = sorted(set(range(1, len(ids) + 1)) - seen)
        raise NetworkValidationError(
            f"Bus ids must be contiguous 1..{len(ids)}; missing {missing[:5]}. "
            "Renumber the buses so that no id is skipped."
        )
    if net.buses and net.slack_bus not in seen:
        raise NetworkValidationError(
            f"Slack bus {net.slack_bus} is not a bus of the case. "
            "Set slack=<id> in the [meta] section."
        )

    pairs = set()
    for branch in net.branches:
        if branch.from_bus == branch.to_bus:
            raise NetworkValidationError(
                f"Branch {branch.label} is a self loop. A branch must join two different buses."
            )
        for endpoint in (branch.from_bus, branch.to_bus):
            if endpoint not in seen:
                raise NetworkValidationError(
                    f"Branch {branch.label} references unknown bus {endpoint}."
                )
        if branch.key in pairs:
            raise NetworkValidationError(
                f"Duplicate branch {branch.label}. Parallel lines are not supported "
                "by the radial model; merge them into one equivalent impedance."
            )
        pairs.add(branch.key)

    dg_ids = set()
    for dg in net.dgs:
        if dg.id in dg_ids:
            raise NetworkValidationError(f"Duplicate DG name {dg.id}.")
        dg_ids.add(dg.id)
        if dg.bus not in seen:
            raise NetworkValidationError(f"DG {dg.id} sits on unknown bus {dg.bus}.")

    if net.buses:
        graph = to_graph(net, closed_only=False)
        if not nx.is_tree(graph):
            components = nx.number_connected_components(graph)
            raise NetworkValidationError(
                f"The case topology is not a tree ({len(net.branches)} branches, "
                f"{len(net.buses)} buses, {components} component(s)). "
                "Radial feeders need exactly n-1 branches joining every bus."
            )
    return net


# ---------------------------------------------------------------------------
# Case files
# ---------------------------------------------------------------------------

_HEADER = re.compile(r"^\[(\w+)\]\s*(.*)$")
_SECTIONS = ("meta", "bus", "branch", "dg")


def parse_case(text: str, source: str = "<string>", name: Optional[str] = None) -> Network:
    """Parse case-file text into a validated Network.

    Raises:
        CaseFileError: malformed content, with the offending line number.
        NetworkValidationError: structurally invalid network.
    """
    meta: Dict[str, str] = {}
    buses: List[Bus] = []
    branches: List[Branch] = []
    dgs: List[DistributedGenerator] = []
    section: Optional[str] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        header = _HEADER.match(line)
        if header:
            section = header.group(1).lower()
            if section not in _SECTIONS:
                raise CaseFileError(
                    f"Unknown section [{section}]; expected one of "
                    f"{', '.join('[' + s + ']' for s in _SECTIONS)}",
                    source, lineno,
                )
            line = header.group(2).strip()
            if not line:
                continue
        if section is None:
            raise CaseFileError("Data row before any section header", source, lineno)

        tokens = line.split()
        try:
            if section == "meta":
                for token in tokens:
                    if "=" not in token:
                        raise CaseFileError(
                            f"Meta entry '{token}' is not key=value", source, lineno
                        )
                    key, value = token.split("=", 1)
                    meta[key.strip().lower()] = value.strip()
            elif section == "bus":
                buses.append(_parse_bus(tokens, source, lineno))
            elif section == "branch":
                branches.append(_parse_branch(tokens, source, lineno))
            else:
                dgs.append(_parse_dg(tokens, source, lineno))
        except CaseFileError:
            raise
        except ValueError as e:
            raise CaseFileError(f"Invalid {section} row '{line}': {e}", source, lineno)

    unknown = set(meta) - {"base_kv", "slack", "umin", "umax", "name"}
    if unknown:
        raise CaseFileError(f"Unknown [meta] keys: {', '.join(sorted(unknown))}", source)
    try:
        umin = float(meta.get("umin", 0.95))
        umax = float(meta.get("umax", 1.05))
        net = Network(
            name=meta.get("name", name or ""),
            buses=sorted(buses, key=lambda b: b.id),
            branches=branches,
            dgs=dgs,
            slack_bus=int(meta.get("slack", 1)),
            base_voltage=float(meta.get("base_kv", 12.66)),
            voltage_limits=(umin, umax),
        )
    except ValueError as e:
        raise CaseFileError(f"Invalid [meta] section: {e}", source)

    validate_network(net)
    logger.info(
        "Parsed case %s: %d buses, %d branches, %d DGs",
        net.name or source, net.n_buses, len(net.branches), len(net.dgs),
    )
    return net


def _parse_bus(tokens: List[str], source: str, lineno: int) -> Bus:
    if len(tokens) != 5:
        raise CaseFileError(
            f"Bus row needs 5 fields (id p_kw q_kvar priority controllable), got {len(tokens)}",
            source, lineno,
        )
    code = int(tokens[3])
    if code not in (1, 2, 3):
        raise CaseFileError(f"Priority must be 1, 2 or 3, got {code}", source, lineno)
    return Bus(
        id=int(tokens[0]),
        load_active=float(tokens[1]),
        load_reactive=float(tokens[2]),
        priority=Priority.from_code(code),
        controllable_fraction=float(tokens[4]),
    )


def _parse_branch(tokens: List[str], source: str, lineno: int) -> Branch:
    status = BranchStatus.CLOSED
    if tokens and tokens[-1].lower() in ("faulted", "closed"):
        status = BranchStatus(tokens.pop().lower())
    if len(tokens) not in (4, 5):
        raise CaseFileError(
            f"Branch row needs 4 or 5 fields (from to r_ohm x_ohm [i_rated_a]), got {len(tokens)}",
            source, lineno,
        )
    return Branch(
        from_bus=int(tokens[0]),
        to_bus=int(tokens[1]),
        resistance=float(tokens[2]),
        reactance=float(tokens[3]),
        rated_current=float(tokens[4]) if len(tokens) == 5 else None,
        status=status,
    )


def _parse_dg(tokens: List[str], source: str, lineno: int) -> DistributedGenerator:
    if len(tokens) != 5:
        raise CaseFileError(
            f"DG row needs 5 fields (name bus rated_kw predicted_kw sigma_kw), got {len(tokens)}",
            source, lineno,
        )
    return DistributedGenerator(
        id=tokens[0],
        bus=int(tokens[1]),
        rated_capacity=float(tokens[2]),
        predicted_output=float(tokens[3]),
        sigma=float(tokens[4]),
    )


def load_case(path: Union[str, Path]) -> Network:
    """Load and validate a case file.

    Raises:
        FileNotFoundError: If the file does not exist
        CaseFileError: If the file is malformed
        NetworkValidationError: If the topology or references are invalid
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"Case file not found: {path}. "
            "The shipped 69-bus feeder lives at cases/ieee69.case."
        )
    name = path.name.split(".")[0]
    return parse_case(path.read_text(encoding="utf-8"), source=str(path), name=name)


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def dump_case(net: Network) -> str:
    """Serialize a Network in case-file format."""
    lines = [
        "[meta]",
        " ".join(
            part for part in (
                f"name={net.name}" if net.name else "",
                f"base_kv={_fmt(net.base_voltage)}",
                f"slack={net.slack_bus}",
                f"umin={_fmt(net.voltage_limits[0])}",
                f"umax={_fmt(net.voltage_limits[1])}",
            ) if part
        ),
        "",
        "[bus]",
    ]
    for bus in net.buses:
        lines.append(
            f"{bus.id} {_fmt(bus.load_active)} {_fmt(bus.load_reactive)} "
            f"{bus.priority.code} {_fmt(bus.controllable_fraction)}"
        )
    lines += ["", "[branch]"]
    for branch in net.branches:
        row = f"{branch.from_bus} {branch.to_bus} {_fmt(branch.resistance)} {_fmt(branch.reactance)}"
        if branch.rated_current is not None:
            row += f" {_fmt(branch.rated_current)}"
        if not branch.closed:
            row += " faulted"
        lines.append(row)
    lines += ["", "[dg]"]
    for dg in net.dgs:
        lines.append(
            f"{dg.id} {dg.bus} {_fmt(dg.rated_capacity)} "
            f"{_fmt(dg.predicted_output)} {_fmt(dg.sigma)}"
        )
    return "\n".join(lines) + "\n"


def save_case(net: Network, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_case(net), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Faults and totals
# ---------------------------------------------------------------------------

def parse_fault(text: str) -> Tuple[int, int]:
    """Parse an ``A-B`` fault token."""
    match = re.fullmatch(r"\s*(\d+)\s*-\s*(\d+)\s*", text)
    if not match:
        raise ValueError(
            f"Invalid fault '{text}'. Use the form A-B with two bus ids, e.g. --fault 3-4."
        )
    return int(match.group(1)), int(match.group(2))


def apply_faults(net: Network, faulted: Iterable[Tuple[int, int]]) -> Network:
    """Return a copy of ``net`` with the named branches marked faulted.

    Raises:
        UnknownBranchError: If a pair does not name a branch of the network.
    """
    wanted = {}
    for a, b in faulted:
        if net.branch_between(a, b) is None:
            raise UnknownBranchError(a, b)
        wanted[(min(a, b), max(a, b))] = (a, b)
    if not wanted:
        return net

    branches = [
        branch.model_copy(update={"status": BranchStatus.FAULTED})
        if branch.key in wanted else branch
        for branch in net.branches
    ]
    logger.info("Applied %d fault(s): %s", len(wanted), ", ".join(f"{a}-{b}" for a, b in wanted))
    return net.model_copy(update={"branches": branches})


def totals_by_level(net: Network) -> Dict[Priority, float]:
    """Active load grouped by priority class."""
    totals = {priority: 0.0 for priority in Priority}
    for bus in net.buses:
        totals[bus.priority] += bus.load_active
    return {priority: round(value, 6) for priority, value in totals.items()}
