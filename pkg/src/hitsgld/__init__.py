"""Langevin dynamics for non-convex optimization, with numerical checks of
its hitting-time geometry."""

__version__ = "0.1.0"
