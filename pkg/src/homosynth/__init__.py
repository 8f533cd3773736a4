"""Speech enhancement by neural homomorphic synthesis."""

__version__ = "0.1.0"
