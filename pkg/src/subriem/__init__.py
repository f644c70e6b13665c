"""Sub-Riemannian connection calculus on nilpotent Lie groups."""

__version__ = "0.1.0"
