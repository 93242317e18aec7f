"""Exception hierarchy shared by the rotec modules."""


class RotecError(Exception):
    """Base class for every error raised by rotec."""


class InvalidInputError(RotecError, ValueError):
    """Bad shapes, non-finite entries or out-of-range parameters."""


class ConfigError(InvalidInputError):
    """A scenario file could not be parsed or is missing keys."""


class DesignError(RotecError):
    """The control design is unusable (non-Schur loop, uncontrollable pair, ...)."""


class HorizonOverflowError(DesignError):
    """Finite determination did not terminate below the horizon cap."""

    def __init__(self, message, output=None):
        super().__init__(message)
        self.output = output


class InfeasibleTighteningError(DesignError):
    """The tightened admissible set has an empty interior."""

    def __init__(self, message, margin=None, required=None, output=None):
        super().__init__(message)
        self.margin = margin
        self.required = required
        self.output = output


class InfeasibleError(RotecError):
    """No command keeps the current state admissible."""


class InvarianceViolationError(InfeasibleError):
    """A governor step was seeded outside the tightened admissible set."""


class BarrierDomainError(RotecError, ValueError):
    """The modified barrier was evaluated on or outside the boundary of its domain."""
