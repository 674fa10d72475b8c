"""Numerical probes for Milnor-type fibrations of real map germs."""

__version__ = "0.1.0"
