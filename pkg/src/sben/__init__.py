"""Symplectic Brezis-Ekeland-Nayroles principle for dissipative Hamiltonian systems."""

__version__ = "0.1.0"
