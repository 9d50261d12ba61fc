"""Exception hierarchy.

Configuration problems derive from :class:`ScenarioError` (a ``ValueError``);
anything that goes wrong while integrating or post-processing derives from
:class:`NumericalError`. The CLI maps the two families to distinct exit codes.
"""


class UscsimError(Exception):
    """Base class for all package errors."""


class DimensionError(UscsimError, ValueError):
    """Matrix or layout dimensions do not fit together."""


class LayoutError(DimensionError):
    """An operation referenced a factor that the layout does not have."""


class HermiticityError(UscsimError, ValueError):
    """An operator that must be Hermitian is not."""


class StateError(UscsimError, ValueError):
    """A density matrix violates trace, Hermiticity or positivity bounds."""


class TruncationError(UscsimError, ValueError):
    """A Fock cut is too small for the requested state.

    ``deficit`` holds the measured missing norm (or leaked population).
    """

    def __init__(self, message, deficit=float("nan")):
        super().__init__(message)
        self.deficit = deficit


class ScenarioError(UscsimError, ValueError):
    """Invalid scenario / preset configuration."""


class NumericalError(UscsimError, RuntimeError):
    """Numerical failure during a run."""


class StepSizeUnderflow(NumericalError):
    pass


class TraceDriftError(NumericalError):
    pass


class LeakageError(NumericalError, TruncationError):
    """Population reached the top of a Fock cut during evolution."""

    def __init__(self, message, deficit=float("nan")):
        TruncationError.__init__(self, message, deficit)


class DegenerateOutcomeError(NumericalError):
    """A measurement branch has (numerically) zero probability."""
