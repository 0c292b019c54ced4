"""Soft-radial feasibility layers for convex constraints."""

__version__ = "0.1.0"
