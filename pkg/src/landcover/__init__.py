"""Multi-label land-cover classification for satellite tiles of buyout properties."""

__version__ = "0.1.0"

from landcover.exceptions import (
    CorpusLoadError,
    InputSizeError,
    LandcoverError,
    NonFiniteLossError,
    SchemaError,
    UndefinedMetricError,
)

__all__ = [
    "__version__",
    "CorpusLoadError",
    "InputSizeError",
    "LandcoverError",
    "NonFiniteLossError",
    "SchemaError",
    "UndefinedMetricError",
]
