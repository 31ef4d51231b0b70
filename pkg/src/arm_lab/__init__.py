"""Simulation laboratory for arm events of loop soups and chordal SLE."""

from .loopsoup import BUILD_ID

__version__ = "0.1.0"
__all__ = ["BUILD_ID", "__version__"]
