"""Adaptive flux estimation with a simulated transmon Ramsey sensor."""

__version__ = "0.1.0"
