"""
Pytest configuration and shared fixtures for the islanding tests.

Provides:
- The shipped 69-bus case, intact and with branch 3-4 faulted
- Its final supply regions and solved islands
- Small synthetic networks
"""

import pytest

from src.islanding.grid_model import Priority, apply_faults, load_case
from src.islanding.power_circle import max_supply_regions
from src.islanding.reachability import islanding_candidates
from src.islanding.runner import PartitionRunner
from tests.networks import IEEE69, build_network, chain


@pytest.fixture(scope="session")
def ieee69_path():
    """Path of the shipped 69-bus case."""
    return IEEE69


@pytest.fixture(scope="session")
def ieee69():
    """The intact 69-bus network."""
    return load_case(IEEE69)


@pytest.fixture(scope="session")
def faulted69(ieee69):
    """The 69-bus network with branch 3-4 faulted."""
    return apply_faults(ieee69, [(3, 4)])


@pytest.fixture(scope="session")
def supply69(faulted69):
    """Final supply regions of the faulted 69-bus case at 1 kW granularity."""
    (candidate,) = islanding_candidates(faulted69)
    return max_supply_regions(faulted69, candidate)


@pytest.fixture(scope="session")
def report69(ieee69):
    """Full pipeline report for fault 3-4."""
    return PartitionRunner().run_sync(ieee69, [(3, 4)])


@pytest.fixture
def priority_chain():
    """Chain 1-2-3-4 fed from a 10 kW DG at bus 1.

    Bus 2 is a 4 kW Tertiary load, bus 3 a 5 kW Primary load and bus 4 a
    3 kW Secondary load.
    """
    return build_network(
        [0, 4, 5, 3],
        chain(4),
        dgs=[("G", 1, 10)],
        priorities={2: Priority.TERTIARY, 3: Priority.PRIMARY},
    )


@pytest.fixture
def merge_example():
    """Path 1-2-3 with bus 4 hanging off bus 2 and 0.4 kW DGs at buses 1 and 3."""
    return build_network(
        [0, 0.4, 0, 0.4],
        [(1, 2), (2, 3), (2, 4)],
        dgs=[("A", 1, 0.4), ("B", 3, 0.4)],
    )
