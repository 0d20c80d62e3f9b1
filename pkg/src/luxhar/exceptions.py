"""Exception types raised across the package.

Everything data-shaped derives from ValueError so callers that only know
sklearn conventions can still catch failures the usual way; checkpoint and
training failures derive from RuntimeError.
"""


class SchemaError(ValueError):
    """A file or record does not have the expected columns or fields."""


class StreamParseError(ValueError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ValidationError(ValueError):
    """Parsed data violates a stream or recording invariant."""


class DegenerateDataError(ValueError):
    """Data has no usable variation (e.g. zero variance in a channel)."""


class MissingSubjectError(LookupError):
    """A split references a subject with no recording."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class ConditionError(ConfigError):
    """An evaluation condition is incompatible with the model variant."""


class ShapeError(ValueError):
    """An array argument has the wrong shape."""


class EmptyBatchError(ValueError):
    """An operation received a batch with zero rows."""


class InputError(ValueError):
    """An array argument has invalid values (non-finite, bad range)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the global step."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class CheckpointError(RuntimeError):
    """Base class for checkpoint load failures."""


class IncompleteCheckpointError(CheckpointError):
    """A checkpoint is missing files or tensors named in its manifest."""


class CorruptCheckpointError(CheckpointError):
    """Stored bytes do not match the manifest (length or digest)."""


class IncompatibleSpecError(CheckpointError):
    """A checkpoint was produced under a different model spec."""
