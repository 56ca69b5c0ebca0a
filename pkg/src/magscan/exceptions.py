"""Exception hierarchy shared across the package.

Every error raised by magscan derives from :class:`MagscanError` so callers
(and the CLI exit-code table) can dispatch on a single root.
"""


class MagscanError(Exception):
    """Root of all magscan errors."""


class DomainError(MagscanError, ValueError):
    """An argument lies outside the physical domain of an operation."""


class ConfigError(MagscanError, ValueError):
    """An experiment/instrument configuration violates its invariants."""


class InsufficientDataError(MagscanError, ValueError):
    """A series or trace is too short for the requested analysis."""


class AmbiguousAssignmentError(MagscanError, ValueError):
    """Harmonic assignment could not be decided uniquely."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


class NotEstimableError(MagscanError, ValueError):
    """No symmetric pair and no zero-field feature to estimate a bias from."""


class FitError(MagscanError, ValueError):
    """A regression is rank deficient or produced an unphysical result."""


class CalibrationError(MagscanError, RuntimeError):
    """The automated calibration loop failed; carries per-step diagnostics."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = tuple(diagnostics)


class SchemaError(MagscanError, ValueError):
    """A CSV/JSON artifact violates its schema; names the offending line."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ProtocolError(MagscanError, RuntimeError):
    """The remote peer violated the line protocol."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class TransportError(MagscanError, ConnectionError):
    """The byte-stream transport failed (connect, timeout, broken pipe)."""


class InstrumentError(MagscanError, RuntimeError):
    """An instrument rejected a command (out of range, unsupported)."""
