"""Adjacency and reachability matrices of the post-fault network.

Buses map to matrix rows by ``index = bus_id - 1``.
"""

from __future__ import annotations

import logging
import math
from typing import FrozenSet, Iterable, List

import numpy as np
from pydantic import BaseModel, Field

from src.islanding.grid_model import Network

logger = logging.getLogger(__name__)


class BoolMatrix:
    """Square boolean matrix indexed by 1-based bus ids."""

    __slots__ = ("bits",)

    def __init__(self, bits: np.ndarray):
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ValueError(f"BoolMatrix must be square, got shape {bits.shape}")
        bits.setflags(write=False)
        self.bits = bits

    @classmethod
    def zeros(cls, n: int) -> "BoolMatrix":
        return cls(np.zeros((n, n), dtype=bool))

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def entry(self, i: int, j: int) -> bool:
        return bool(self.bits[i - 1, j - 1])

    def row(self, i: int) -> List[int]:
        """Bus ids set in row ``i``."""
        return [int(j) + 1 for j in np.flatnonzero(self.bits[i - 1])]

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.bits, self.bits.T))

    def count(self) -> int:
        return int(self.bits.sum())

    def to_pbm(self) -> str:
        """Render as a plain (P1) portable bitmap."""
        lines = ["P1", f"{self.n} {self.n}"]
        lines += [" ".join("1" if v else "0" for v in row) for row in self.bits]
        return "\n".join(lines) + "\n"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoolMatrix):
            return NotImplemented
        return bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    def __repr__(self) -> str:
        return f"BoolMatrix(n={self.n}, ones={self.count()})"


class ReachableRegion(BaseModel):
    """One connected component of the post-fault network."""

    model_config = {"frozen": True}

    members: FrozenSet[int]
    contains_slack: bool
    dgs: List[str] = Field(default_factory=list, description="DG ids located on member buses")

    @property
    def size(self) -> int:
        return len(self.members)


def adjacency_matrix(net: Network) -> BoolMatrix:
    """Entry (i, j) set iff a closed branch joins buses i and j."""
    bits = np.zeros((net.n_buses, net.n_buses), dtype=bool)
    for branch in net.branches:
        if branch.closed:
            i, j = branch.from_bus - 1, branch.to_bus - 1
            bits[i, j] = True
            bits[j, i] = True
    return BoolMatrix(bits)


def _bool_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # AND-OR product; the integer matmul counts witnesses and any count > 0 is True.
    return (a.astype(np.int64) @ b.astype(np.int64)) > 0


def reachability_matrix(a: BoolMatrix) -> BoolMatrix:
    """Logical OR of the boolean powers A^1 .. A^n.

    Computed by repeated squaring of (A OR I), which reaches every path of
    length up to n in ceil(log2 n) products. The identity is then replaced by
    the walks of length two, so a bus reaches itself iff it has a neighbour.
    """
    n = a.n
    if n == 0:
        return BoolMatrix.zeros(0)
    closure = a.bits | np.eye(n, dtype=bool)
    for _ in range(max(1, math.ceil(math.log2(n))) if n > 1 else 0):
        squared = _bool_product(closure, closure)
        if np.array_equal(squared, closure):
            break
        closure = squared
    result = closure.copy()
    diagonal = a.bits.any(axis=1) if n > 1 else a.bits.diagonal().copy()
    np.fill_diagonal(result, diagonal)
    return BoolMatrix(result)


def reachability_by_powers(a: BoolMatrix) -> BoolMatrix:
    """Naive OR over A^1 .. A^n, kept as the reference for the squaring closure."""
    n = a.n
    if n == 0:
        return BoolMatrix.zeros(0)
    power = a.bits.copy()
    result = a.bits.copy()
    for _ in range(1, n):
        power = _bool_product(power, a.bits)
        result |= power
    return BoolMatrix(result)


def regions_from_matrix(net: Network, reach: BoolMatrix) -> List[ReachableRegion]:
    """Split buses into the equivalence classes encoded by ``reach``."""
    assigned = set()
    regions: List[ReachableRegion] = []
    for bus in net.buses:
        if bus.id in assigned:
            continue
        members = {bus.id, *reach.row(bus.id)}
        assigned |= members
        regions.append(
            ReachableRegion(
                members=frozenset(members),
                contains_slack=net.slack_bus in members,
                dgs=[dg.id for dg in net.dgs if dg.bus in members],
            )
        )
    return regions


def regions(net: Network) -> List[ReachableRegion]:
    """Reachable regions of the network, ordered by their lowest bus id."""
    found = regions_from_matrix(net, reachability_matrix(adjacency_matrix(net)))
    logger.info(
        "Found %d reachable region(s); sizes %s",
        len(found), [r.size for r in found],
    )
    return found


def islanding_candidates(net: Network) -> List[ReachableRegion]:
    """Off-grid regions that hold at least one DG."""
    return [r for r in regions(net) if not r.contains_slack and r.dgs]


def grid_connected_dgs(net: Network, found: Iterable[ReachableRegion]) -> List[str]:
    dgs: List[str] = []
    for region in found:
        if region.contains_slack:
            dgs.extend(region.dgs)
    return sorted(dgs)
