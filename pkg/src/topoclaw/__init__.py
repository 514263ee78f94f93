"""TopoClaw: a deterministic, desk-scale agent-OS runtime simulator.

Models a user's digital life as two coupled graphs (physical devices,
social trust), routes action DAGs across devices under capability
constraints, attributes every cross-boundary step to a human identity,
and passes all effects through a layered, conjunctive governance
pipeline. The cognitive layer is a table-driven intent compiler, so every
behavior is reproducible and testable.
"""

__version__ = "0.1.0"
