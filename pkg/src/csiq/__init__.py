"""Desk-scale laboratory for bit-level CSI feedback with mu-law
quantization and codeword adaptors."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    CsiqError,
    DomainError,
    FormatError,
    NumericError,
    ShapeError,
)
