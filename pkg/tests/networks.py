"""Small network builders shared by the test modules."""

from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple

from src.islanding.grid_model import (
    Branch,
    Bus,
    DistributedGenerator,
    Network,
    Priority,
    validate_network,
)
from src.islanding.power_circle import SupplyRegion

CASES_DIR = Path(__file__).resolve().parent.parent / "cases"
IEEE69 = CASES_DIR / "ieee69.case"


def build_network(
    loads: Sequence[float],
    edges: Iterable[Tuple[int, int]],
    dgs: Iterable[Tuple[str, int, float]] = (),
    priorities: Optional[Dict[int, Priority]] = None,
    controllable: Optional[Dict[int, float]] = None,
    reactive: Optional[Dict[int, float]] = None,
    impedance: Tuple[float, float] = (0.1, 0.05),
    slack: int = 1,
    name: str = "test",
) -> Network:
    """Network with bus ``k`` carrying ``loads[k - 1]`` kW.

    Buses default to Secondary priority and no controllable share; DGs are
    ``(id, bus, kW)`` with forecast equal to rating and no deviation.
    """
    priorities = priorities or {}
    controllable = controllable or {}
    reactive = reactive or {}
    buses = [
        Bus(
            id=k,
            load_active=load,
            load_reactive=reactive.get(k, 0.0),
            priority=priorities.get(k, Priority.SECONDARY),
            controllable_fraction=controllable.get(k, 0.0),
        )
        for k, load in enumerate(loads, start=1)
    ]
    branches = [
        Branch(from_bus=a, to_bus=b, resistance=impedance[0], reactance=impedance[1])
        for a, b in edges
    ]
    generators = [
        DistributedGenerator(id=dg_id, bus=bus, rated_capacity=kw, predicted_output=kw)
        for dg_id, bus, kw in dgs
    ]
    return validate_network(
        Network(name=name, buses=buses, branches=branches, dgs=generators, slack_bus=slack)
    )


def chain(n: int):
    return [(k, k + 1) for k in range(1, n)]


def region_of(members: Iterable[int], roots: Iterable[int], capacity: float,
              granularity: float = 1.0, dgs: Iterable[str] = ("G",),
              committed: Optional[Dict[int, float]] = None) -> SupplyRegion:
    """A supply region given directly, bypassing the circle search."""
    return SupplyRegion(
        dgs=frozenset(dgs),
        root_buses=frozenset(roots),
        capacity=capacity,
        members=frozenset(members),
        granularity=granularity,
        committed=committed or {},
    )
