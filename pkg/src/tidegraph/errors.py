"""Exception types shared across the package."""


class DataError(Exception):
    """Base class for problems with event files or their contents."""


class ParseError(DataError):
    """A row of an event file could not be parsed. Carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(DataError):
    """Feature arity or column layout is inconsistent with the header."""


class ValidationError(DataError):
    """Parsed data violates a store invariant (ordering, sign, id range)."""


class SplitError(ValueError):
    """A requested chronological split would leave some range empty."""


class SamplingError(ValueError):
    """Negative sampling cannot produce a candidate (empty target universe)."""


class MetricError(ValueError):
    """A ranking metric is undefined for the given inputs (missing class)."""


class ConfigError(ValueError):
    """A configuration value is out of range or internally inconsistent."""


class LeakageError(ValueError):
    """An operation would read interactions at or after its query time."""


class CheckFailure(RuntimeError):
    """A numerical self-check (gradient check, finiteness) could not run."""
