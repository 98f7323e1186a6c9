"""Patch-based photo-to-sketch synthesis.

Three stages: an MRF over small patches picks training sketch patches to
form a crude sketch, per-location NMF dictionaries retrain larger patches
of it, and a three-pass multiresolution spline blends them back together.
"""

__version__ = "0.1.0"
