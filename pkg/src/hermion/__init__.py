"""Hermite-Taylor solver for 2D TM_z Maxwell with discrete correction functions."""
__version__ = "0.1.0"
