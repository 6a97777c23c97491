"""Exception types shared across the package.

Each type maps to one process exit code in the command line tool, so
library code should raise the most specific one that applies.
"""


class ConfigurationError(ValueError):
    """Bad configuration: unknown keys, wrong types, impossible shapes."""


class DataError(ValueError):
    """Bad data on disk or values outside a metric's domain."""


class CheckFailure(RuntimeError):
    """A verification run (gradient check, acceptance probe) failed."""
