"""Learned image codec whose decoder taps double as a perceptual distance.

Submodules are imported lazily by callers; this file only exposes the version
and the error hierarchy.
"""

from .errors import (BindingError, ConfigError, CpipsError, FormatError, ManifestError,
                     RangeCoderError)

__version__ = "0.1.0"

__all__ = ["BindingError", "ConfigError", "CpipsError", "FormatError", "ManifestError",
           "RangeCoderError", "__version__"]
