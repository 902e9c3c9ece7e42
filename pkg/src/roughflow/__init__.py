"""Multiscale solver for diffusive Oldroyd viscoelastic flow in a rough channel."""

__version__ = "0.1.0"
