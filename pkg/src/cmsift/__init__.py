"""Structure recovery and call-argument extraction for stripped Cortex-M firmware."""

__version__ = "0.1.0"
