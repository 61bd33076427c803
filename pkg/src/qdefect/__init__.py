"""Hybrid classical-quantum wafer-defect classifier built on a small statevector simulator."""

__version__ = "0.1.0"
