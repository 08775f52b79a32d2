"""Exception types shared across arl-lab."""


class ArlLabError(Exception):
    """Base class for every error raised by arl-lab."""


class ShapeError(ArlLabError, ValueError):
    """Operands of a recorded operation have incompatible shapes."""


class LabelError(ArlLabError, ValueError):
    """A label is out of range, or labels required by an objective are absent."""


class NumericError(ArlLabError, ArithmeticError):
    """A loss, gradient or function evaluation produced a non-finite value."""


class DatasetError(ArlLabError):
    """A dataset or schema file could not be read or preprocessed."""


class CheckpointError(ArlLabError):
    """A checkpoint is malformed or does not hold the expected models."""


class ConfigError(ArlLabError):
    """An experiment config failed validation."""

    def __init__(self, field, message):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")

    def __reduce__(self):
        return type(self), (self.field, self.message)


class OutputExistsError(ArlLabError):
    """The output directory already holds files and --force was not given."""
