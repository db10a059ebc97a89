"""Structured error types shared across the package."""


class CsiqError(Exception):
    """Base class for all csiq errors."""


class ShapeError(CsiqError):
    """Dimension/shape disagreement between operands."""


class DomainError(CsiqError):
    """Input outside the documented domain of an operation."""


class NumericError(CsiqError):
    """Non-finite value produced or consumed where finiteness is required."""


class FormatError(CsiqError):
    """Malformed file: bad magic, version, truncation, or field overflow."""


class ConfigError(CsiqError):
    """Invalid or inconsistent configuration."""
