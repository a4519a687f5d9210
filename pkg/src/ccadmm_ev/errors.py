"""Exception types raised across the package."""


class CCAdmmError(Exception):
    """Base class for all package errors."""


class InvalidQueryError(CCAdmmError, ValueError):
    """A node or phase that does not exist in the feeder was requested."""


class GridSpecError(CCAdmmError, ValueError):
    """The feeder description violates a structural invariant."""


class DimensionError(CCAdmmError, ValueError):
    """Array shapes do not agree with the model dimensions."""


class InfeasibleParametersError(CCAdmmError, ValueError):
    """EV parameters admit no feasible power profile."""


class IsolatedAgentError(CCAdmmError, ValueError):
    """An agent has no neighbours in the communication graph."""


class DisconnectedGraphError(CCAdmmError, ValueError):
    """The communication graph is not connected."""


class SolverInfeasibleError(CCAdmmError, RuntimeError):
    """The inner QP solver found a certificate of primal infeasibility."""

    def __init__(self, message, agent=None, report=None):
        super().__init__(message)
        self.agent = agent
        self.report = report


class ScenarioValidationError(CCAdmmError, ValueError):
    """A scenario file failed validation; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class MismatchedRunsError(CCAdmmError, ValueError):
    """Two run results that should describe the same scenario do not."""
