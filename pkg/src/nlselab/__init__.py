"""Numerical laboratory for the semiclassical nonlinear Schrodinger equation
on bounded domains with homogeneous Dirichlet conditions."""

__version__ = "0.1.0"
