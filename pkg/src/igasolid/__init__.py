"""Isogeometric mixed solver for incompressible finite-strain elastodynamics."""

__version__ = "0.1.0"
