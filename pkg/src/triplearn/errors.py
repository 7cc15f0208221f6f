"""Exception types shared across the package."""


class TriplearnError(Exception):
    """Base class for all package errors."""


class ShapeError(TriplearnError, ValueError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(TriplearnError, ValueError):
    """Invalid configuration value (bad sizes, unknown kind, ...)."""


class NumericError(TriplearnError, ArithmeticError):
    """A computation produced or received a non-finite value."""


class ContractError(TriplearnError, ValueError):
    """An input violates an operation's contract (e.g. unlabeled triplet
    passed where a labeled one is required)."""


class ParseError(TriplearnError, ValueError):
    """A data file could not be parsed; message carries the line number."""


class ValidationError(TriplearnError, ValueError):
    """Parsed data violates a structural constraint (bad index, duplicate id)."""


class PoolExhaustedError(TriplearnError, RuntimeError):
    """The unlabeled pool is too small for the requested batch."""
