"""Exception types shared across the package.

The CLI maps these onto exit codes: schema and integrity problems are data
errors (exit 3), numeric failures during training or solving are exit 4,
and bad invocations are usage errors (exit 2).
"""

from __future__ import annotations


class WalkembedError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(WalkembedError):
    """The schema descriptor is malformed or self-inconsistent."""


class IntegrityError(WalkembedError):
    """Data violates a key or foreign-key constraint."""


class NumericError(WalkembedError):
    """A computation produced non-finite values or an unsolvable system."""


class UsageError(WalkembedError):
    """The caller asked for something the configuration cannot express."""
