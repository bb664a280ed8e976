"""Exception types shared across the package."""


class WatermeiError(Exception):
    """Base class for all package errors."""


class InpParseError(WatermeiError):
    """Malformed network file. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ScenarioError(WatermeiError):
    """Malformed or inconsistent scenario configuration."""


class SimulationError(WatermeiError):
    """A hydraulic solve could not produce a usable state."""


class ConvergenceError(SimulationError):
    """Newton iteration exhausted without meeting tolerances."""


class DisconnectedNodeError(SimulationError):
    """A demanded junction has no path to any fixed-head node."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        super().__init__(f"demanded junction {node_id!r} is isolated from all sources")


class BacktrackError(WatermeiError):
    """Flow backtracking hit an inconsistent snapshot."""


class SearchError(WatermeiError):
    """The schedule search could not produce a feasible population."""
