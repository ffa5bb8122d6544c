"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array shapes are incompatible with an operation."""


class ParseError(ValueError):
    """A data file could not be parsed.

    ``row`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class FormatError(ValueError):
    """A data file is well-formed but semantically invalid."""


class ConfigError(ValueError):
    """Invalid model or experiment configuration."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or gradient)."""


class SamplingError(RuntimeError):
    """Reverse diffusion produced non-finite values."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or of the wrong kind."""
