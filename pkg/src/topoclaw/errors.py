"""Shared exception hierarchy.

Every error raised by the package derives from :class:`TopoClawError` so
callers (and the CLI) can catch domain failures without swallowing bugs.
"""

from __future__ import annotations


class TopoClawError(Exception):
    """Base class for all domain errors."""


class GraphError(TopoClawError):
    """A device or social graph violates a structural invariant."""


class UnknownNodeError(GraphError):
    """A node id does not resolve in the device graph."""


class DagError(TopoClawError):
    """A task DAG or intent script is malformed."""


class UnknownVerbError(DagError):
    """An intent step uses a verb absent from the verb table."""


class CycleError(DagError):
    """The dependency relation contains a cycle."""

    def __init__(self, cycle: list[str]):
        super().__init__(f"dependency cycle: {' -> '.join(cycle)}")
        self.cycle = cycle


class PlacementError(TopoClawError):
    """Placement failed (infeasible instance or guard exceeded)."""


class InfeasiblePlacementError(PlacementError):
    """Some action has no node satisfying its required capabilities."""

    def __init__(self, action_id: str, detail: str):
        super().__init__(f"action {action_id!r} is infeasible: {detail}")
        self.action_id = action_id


class SearchSpaceError(PlacementError):
    """The exhaustive solver's search-space guard was exceeded."""


class UnreachablePairError(PlacementError):
    """A dependency with nonzero payload spans disconnected nodes."""


class AttributionError(TopoClawError):
    """Event attribution or delegation failed."""


class KeyLookupError(AttributionError):
    """A key reference or user id does not resolve in the key store."""


class BroadcastError(TopoClawError):
    """A shared-space broadcast violates membership or verification rules."""


class PolicyConfigError(TopoClawError):
    """The governance pipeline is misconfigured."""


class MemoryFormatError(TopoClawError):
    """A workspace memory file is malformed."""

    def __init__(self, path: str, line: int, detail: str):
        super().__init__(f"{path}:{line}: {detail}")
        self.path = path
        self.line = line


class TimestampOrderError(TopoClawError):
    """An observation's timestamp regressed."""

    def __init__(self, index: int, detail: str):
        super().__init__(f"observation {index}: {detail}")
        self.index = index


class CronError(TopoClawError):
    """A cron expression is invalid or never fires."""


class SkillError(TopoClawError):
    """A skill manifest, registry, or template operation failed."""


class ScenarioError(TopoClawError):
    """A scenario file is malformed or inconsistent with the deployment mode."""


class TranscriptError(TopoClawError):
    """A transcript fails an offline invariant check."""
