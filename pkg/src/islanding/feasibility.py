"""Voltage and current checks of solved islands by backward/forward sweep.

Powers are three-phase kW/kVar, voltages line-to-line kV and currents A,
so for a branch of impedance Z carrying I the drop is sqrt(3) * Z * I / 1000 kV.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.islanding.errors import ConvergenceError
from src.islanding.grid_model import Network, closed_adjacency
from src.islanding.partition_solver import Island
from src.islanding.power_circle import stable_output

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)


class FlowSolution(BaseModel):
    """Result of a radial power-flow sweep over one island."""

    source_bus: int
    voltages: Dict[int, float] = Field(default_factory=dict, description="Per-unit magnitudes")
    currents: Dict[Tuple[int, int], float] = Field(
        default_factory=dict, description="Branch current in A keyed by (parent, child)"
    )
    converged: bool = True
    iterations: int = 0
    trace: List[float] = Field(default_factory=list, description="Max voltage change per iteration")
    losses_kw: float = 0.0
    source_injection_kw: float = 0.0
    dg_injection_kw: Dict[str, float] = Field(default_factory=dict)
    served_kw: float = 0.0

    @property
    def min_voltage(self) -> float:
        return min(self.voltages.values()) if self.voltages else 1.0

    @property
    def max_voltage(self) -> float:
        return max(self.voltages.values()) if self.voltages else 1.0

    @property
    def energy_mismatch_kw(self) -> float:
        """Losses plus served load minus all injections."""
        supplied = self.source_injection_kw + sum(self.dg_injection_kw.values())
        return self.losses_kw + self.served_kw - supplied


class ConstraintViolation(BaseModel):
    """One violated operating constraint."""

    kind: str = Field(..., description="voltage, current, capacity, connectivity, convergence or oracle")
    element: str
    value: float = 0.0
    limit: float = 0.0
    message: str = ""


def _island_tree(net: Network, island: Island, source: int):
    adjacency = closed_adjacency(net)
    parent: Dict[int, Optional[int]] = {source: None}
    order = [source]
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for neighbour in adjacency[node]:
            if neighbour in island.energized and neighbour not in parent:
                parent[neighbour] = node
                order.append(neighbour)
                queue.append(neighbour)
    return parent, order


def _dg_injections(net: Network, island: Island, source: int) -> Dict[str, float]:
    """Share of the island load carried by every DG except the source."""
    dgs = [net.dg(d) for d in sorted(island.dgs)]
    outputs = {dg.id: stable_output(dg, island.granularity) for dg in dgs}
    pooled = sum(outputs.values())
    served = sum(island.restored_kw.values())
    shares = {}
    for dg in dgs:
        if dg.bus == source and dg.id == min(d.id for d in dgs if d.bus == source):
            continue
        shares[dg.id] = served * outputs[dg.id] / pooled if pooled > 0 else 0.0
    return shares


def solve_flow(net: Network, island: Island, tolerance: float = 1e-6,
               max_iterations: int = 100, raise_on_failure: bool = True) -> FlowSolution:
    """Backward/forward sweep over the energized buses of ``island``.

    The lowest-id DG bus is the 1.0 pu source. Other DGs inject their
    pro-rata share of the served load at unity power factor.

    Raises:
        ConvergenceError: If the sweep does not settle within ``max_iterations``.
    """
    roots = sorted(island.root_buses) or sorted(net.dg(d).bus for d in island.dgs)
    source = roots[0]
    parent, order = _island_tree(net, island, source)
    index = {bus: k for k, bus in enumerate(order)}
    n = len(order)

    injections = _dg_injections(net, island, source)
    demand = np.zeros(n, dtype=complex)
    for bus_id in order:
        bus = net.bus(bus_id)
        served = island.restored_kw.get(bus_id, 0.0)
        ratio = served / bus.load_active if bus.load_active > 0 else 0.0
        demand[index[bus_id]] = complex(served, bus.load_reactive * ratio)
    for dg_id, kw in injections.items():
        demand[index[net.dg(dg_id).bus]] -= kw

    impedance = np.zeros(n, dtype=complex)
    parent_index = np.full(n, -1, dtype=int)
    for bus_id in order[1:]:
        branch = net.branch_between(bus_id, parent[bus_id])
        impedance[index[bus_id]] = complex(branch.resistance, branch.reactance)
        parent_index[index[bus_id]] = index[parent[bus_id]]

    base = net.base_voltage
    voltage = np.full(n, base, dtype=complex)
    current = np.zeros(n, dtype=complex)
    trace: List[float] = []
    converged = False

    for iteration in range(1, max_iterations + 1):
        # backward: accumulate branch currents from leaves to the source
        current = np.conj(demand / (SQRT3 * voltage))
        for k in range(n - 1, 0, -1):
            current[parent_index[k]] += current[k]
        # forward: update voltages from the source outwards
        updated = voltage.copy()
        updated[0] = base
        for k in range(1, n):
            updated[k] = updated[parent_index[k]] - SQRT3 * impedance[k] * current[k] / 1000.0
        change = float(np.max(np.abs(updated - voltage)) / base) if n else 0.0
        voltage = updated
        trace.append(change)
        if change < tolerance:
            converged = True
            break

    if not converged:
        message = (
            f"Power flow of island [{', '.join(sorted(island.dgs))}] did not converge in "
            f"{max_iterations} iterations (last change {trace[-1]:.3e} pu). "
            "The island may be too heavily loaded for its feeder impedance."
        )
        if raise_on_failure:
            raise ConvergenceError(message, trace)
        logger.warning(message)

    losses = float(sum(3.0 * abs(current[k]) ** 2 * impedance[k].real for k in range(1, n)) / 1000.0)
    source_current = current[0]
    source_power = SQRT3 * voltage[0] * np.conj(source_current)
    solution = FlowSolution(
        source_bus=source,
        voltages={order[k]: float(abs(voltage[k]) / base) for k in range(n)},
        currents={(order[parent_index[k]], order[k]): float(abs(current[k])) for k in range(1, n)},
        converged=converged,
        iterations=len(trace),
        trace=trace,
        losses_kw=losses,
        source_injection_kw=float(source_power.real),
        dg_injection_kw=injections,
        served_kw=float(sum(island.restored_kw.values())),
    )
    logger.debug(
        "Flow of island [%s]: %d iterations, Vmin %.4f pu, losses %.3f kW",
        ", ".join(sorted(island.dgs)), solution.iterations, solution.min_voltage, losses,
    )
    return solution


def check_constraints(net: Network, sol: FlowSolution, umin: Optional[float] = None,
                      umax: Optional[float] = None) -> List[ConstraintViolation]:
    """Voltage band and ampacity violations of a flow solution.

    Branches without a rated current are skipped and counted in a warning.
    """
    low = net.voltage_limits[0] if umin is None else umin
    high = net.voltage_limits[1] if umax is None else umax
    violations: List[ConstraintViolation] = []

    for bus_id, magnitude in sorted(sol.voltages.items()):
        if magnitude < low or magnitude > high:
            violations.append(
                ConstraintViolation(
                    kind="voltage",
                    element=f"bus {bus_id}",
                    value=magnitude,
                    limit=low if magnitude < low else high,
                    message=f"Bus {bus_id} voltage {magnitude:.4f} pu outside [{low}, {high}]",
                )
            )

    unrated = 0
    for (a, b), amps in sorted(sol.currents.items()):
        branch = net.branch_between(a, b)
        if branch is None or branch.rated_current is None:
            unrated += 1
            continue
        if amps >= branch.rated_current:
            violations.append(
                ConstraintViolation(
                    kind="current",
                    element=f"branch {a}-{b}",
                    value=amps,
                    limit=branch.rated_current,
                    message=f"Branch {a}-{b} carries {amps:.1f} A, rating {branch.rated_current:.1f} A",
                )
            )
    if unrated:
        logger.warning("Current check skipped on %d branch(es) without a rating", unrated)
    return violations
