"""Exception types raised across the package."""


class EnvScaleError(Exception):
    """Base class for all package errors."""


class InfeasibleConfig(EnvScaleError):
    """A generator config cannot be satisfied (e.g. unreachable edge density)."""


class NoFeasibleChain(EnvScaleError):
    """No dependency-feasible tool chain of the requested length exists."""


class UnsatisfiableSlot(EnvScaleError):
    """A user-provided slot cannot be given any value (empty enum domain)."""


class GraphTooSmall(EnvScaleError):
    """The tool graph has fewer tools than a strict environment requires."""


class UnknownTool(EnvScaleError, KeyError):
    """A tool call names a tool id that is not part of the graph."""


class InfeasibleBudget(EnvScaleError):
    """Per-task rollout bounds cannot meet the requested total."""


class CapacityInfeasible(EnvScaleError):
    """Workload KV demand cannot fit the simulated cluster."""


class CyclicOrder(EnvScaleError):
    """A capability-tier precedence relation contains a cycle."""
