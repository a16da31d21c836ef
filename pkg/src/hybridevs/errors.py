"""Error types shared across the package.

Every failure a caller can act on maps to one of these, and the CLI maps
them to process exit codes: ConfigError -> 2, DataError -> 3,
VerificationError -> 4.  Anything else is a plain bug and escapes.
"""

from __future__ import annotations


class HybridEvsError(Exception):
    """Base class for all package errors."""


class ShapeError(HybridEvsError):
    """An operation received tensors whose shapes do not fit its contract."""

    def __init__(self, op: str, got, expected) -> None:
        super().__init__(f"{op}: got shape {tuple(got)}, expected {expected}")
        self.op = op
        self.got = tuple(got)
        self.expected = expected


class ConfigError(HybridEvsError):
    """A config file or config object is malformed or inconsistent."""


class DataError(HybridEvsError):
    """An input file (image, manifest, checkpoint) is missing or malformed."""


class VerificationError(HybridEvsError):
    """A numerical self-check (gradient check, oracle comparison) failed."""
