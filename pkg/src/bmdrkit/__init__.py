"""Bit-metric decoding rate (BMDR) toolkit for MU-MIMO detectors."""

from .errors import BmdrError, DataError, NumericError
from .numerics import RngStream

__version__ = "0.1.0"

__all__ = ["BmdrError", "DataError", "NumericError", "RngStream", "__version__"]
