"""Numerical toolkit for open dynamical systems: escape rates,
quasi-stationary measures, survivor-set invariant measures, entropy,
Lyapunov exponents and pressure."""

__version__ = "0.1.0"
