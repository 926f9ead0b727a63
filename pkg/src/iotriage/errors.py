"""Error hierarchy shared across the pipeline.

Each subclass carries the exit code the CLI maps it to, so failure
classes stay distinguishable end to end.
"""


class TriageError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigError(TriageError):
    """Bad or missing configuration: unknown paths, malformed config, absent credentials."""

    exit_code = 2


class DataError(TriageError):
    """Bad input data: malformed CSV, unknown labels, schema violations."""

    exit_code = 3


class GatewayError(TriageError):
    """Endpoint failures: retries exhausted, replay misses, transport faults."""

    exit_code = 4


class VerdictParseError(TriageError):
    """Judge completion could not be parsed into rubric scores."""

    exit_code = 5

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw
