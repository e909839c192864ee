"""Grand-canonical loop-gas Monte Carlo for hard-core bosons in a box."""

__version__ = "0.1.0"
