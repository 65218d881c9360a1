"""Error types shared across the package.

Every error carries a category that maps onto a process exit code:
usage -> 1, validation -> 2, numeric -> 3.
"""


class PcircError(Exception):
    """Base class for all package errors."""

    category = "usage"


class UsageError(PcircError):
    """Bad invocation: missing files, malformed options, out-of-range knobs."""

    category = "usage"


class CircuitValidationError(PcircError):
    """The circuit (or data fed to it) violates a structural contract."""

    category = "validation"


class FormatError(CircuitValidationError):
    """A model, cache, or dataset file does not parse or fails its checksums."""


class NumericError(PcircError):
    """A numeric failure: degenerate accumulators, non-finite results."""

    category = "numeric"


EXIT_CODES = {"usage": 1, "validation": 2, "numeric": 3}


def exit_code_for(category: str) -> int:
    return EXIT_CODES.get(category, 1)
