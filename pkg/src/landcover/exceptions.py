class LandcoverError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(LandcoverError, ValueError):
    """Input file content does not match the expected layout."""


class CorpusLoadError(LandcoverError, OSError):
    """A referenced image is missing or cannot be decoded."""


class InputSizeError(LandcoverError, ValueError):
    """Image batch is smaller than the backbone's minimum input size."""


class UndefinedMetricError(LandcoverError, ValueError):
    """A metric has no valid inputs to be computed from."""


class NonFiniteLossError(LandcoverError, RuntimeError):
    """Training produced a NaN or infinite loss."""
