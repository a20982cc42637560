"""doslab: density-of-states laboratory for discrete random Schrodinger operators."""

__version__ = "0.1.0"
