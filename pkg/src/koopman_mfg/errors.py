"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PipelineError(Exception):
    exit_code = 1


class ConfigError(PipelineError, ValueError):
    """Invalid configuration or arguments."""

    exit_code = 2


class DataError(PipelineError, ValueError):
    """Malformed or out-of-range input data."""

    exit_code = 3


class NumericError(PipelineError, ArithmeticError):
    """Divergence, non-finite values or failed factorizations."""

    exit_code = 4
