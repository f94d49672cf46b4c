"""Exception hierarchy for the islanding solver.

Every error carries the name of the module that raised it so that the CLI
can print ``[module] message`` without inspecting tracebacks.
"""

from typing import List, Optional


class IslandingError(ValueError):
    """Base class for all solver errors."""

    module = "islanding"

    def __init__(self, message: str, module: Optional[str] = None):
        super().__init__(message)
        if module is not None:
            self.module = module
        self.message = message

    def __str__(self) -> str:
        return f"[{self.module}] {self.message}"


class CaseFileError(IslandingError):
    """Malformed case file."""

    module = "grid_model"

    def __init__(self, message: str, source: str = "<string>", line: Optional[int] = None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{message} ({where})")
        self.source = source
        self.line = line


class NetworkValidationError(IslandingError):
    """Structural invariant of a Network violated."""

    module = "grid_model"


class UnknownBranchError(IslandingError):
    """A fault names a branch that does not exist."""

    module = "grid_model"

    def __init__(self, from_bus: int, to_bus: int):
        super().__init__(
            f"No branch connects buses {from_bus} and {to_bus}. "
            "Faults must name an existing branch as 'A-B'. "
            "Check the [branch] section of the case file for the exact pair."
        )
        self.from_bus = from_bus
        self.to_bus = to_bus


class RegionError(IslandingError):
    """Origin or member set of a region is inconsistent with the network."""

    module = "power_circle"


class InfeasibleCommitmentError(IslandingError):
    """Forced loads of a region exceed its capacity."""

    module = "partition_solver"

    def __init__(self, message: str, required_kw: float, capacity_kw: float):
        super().__init__(message)
        self.required_kw = required_kw
        self.capacity_kw = capacity_kw


class ConvergenceError(IslandingError):
    """Backward/forward sweep did not converge."""

    module = "feasibility"

    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message)
        self.trace = list(trace or [])


class OracleSizeError(IslandingError):
    """Region too large for exhaustive enumeration."""

    module = "oracle"
