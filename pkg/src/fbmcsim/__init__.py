"""FBMC/OQAM short-filter simulation: filters, modems, channels, analysis and a fixed-point FS model."""

__version__ = "0.1.0"

from . import analysis, channel, filters, modem  # noqa: E402,F401
