"""Feedback stabilization of memory-type Navier-Stokes flows on the 2D torus."""

__version__ = "0.1.0"
