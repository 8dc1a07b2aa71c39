"""Exception types shared across the package.

Every contract violation raises one of these, so callers (and the CLI exit-code
mapping) can tell configuration mistakes apart from bad data or misuse of
stateful APIs.
"""


class ConfigError(ValueError):
    """A configuration value is out of range, unknown, or inconsistent."""


class DimensionError(ValueError):
    """Array shapes or feature dimensions do not match the declared layout."""


class ValidationError(ValueError):
    """Data content is invalid (non-finite values, out-of-range labels, ...)."""


class ParseError(ValueError):
    """A file could not be parsed; the message names the offending row."""


class SampleSizeError(ValueError):
    """An estimator received fewer samples than it needs."""


class StateError(RuntimeError):
    """An operation was called before the state it depends on exists."""


class InferenceError(RuntimeError):
    """Prediction is impossible with the current prototype bank."""


class TrainingError(RuntimeError):
    """The training contract is violated (e.g. a class missing from the source)."""
