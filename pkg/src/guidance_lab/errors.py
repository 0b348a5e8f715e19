"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ParameterError(ValueError):
    """A parameter lies outside its documented domain."""


class SingularScheduleError(ParameterError):
    """A noise-schedule coefficient makes the requested inversion singular."""


class UndefinedMetricError(ValueError):
    """A metric was requested on inputs for which it has no defined value."""


class TrainingDivergenceError(RuntimeError):
    """Training produced a non-finite loss; the message carries diagnostics."""


class ConfigError(ValueError):
    """An experiment configuration field is invalid; the message starts with the field path."""
