"""Simulation of explicit SDAEs on embedded Riemannian manifolds."""

__version__ = "0.1.0"
