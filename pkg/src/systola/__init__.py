"""Computational systolic geometry on lattices, normed spaces and flat-torus meshes."""

__version__ = "0.1.0"
