"""Anytime command governor with early-termination-robust primal-dual flow."""

from .errors import (
    BarrierDomainError,
    ConfigError,
    DesignError,
    HorizonOverflowError,
    InfeasibleError,
    InfeasibleTighteningError,
    InvalidInputError,
    InvarianceViolationError,
    RotecError,
)

__version__ = "0.1.0"
