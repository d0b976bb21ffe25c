"""Numerical toolkit for degenerate parabolic equations on Carnot tori."""
from .group import (GroupDescriptor, abelian, compose, dilate, heisenberg, homogeneous_norm,
                    inverse, load_descriptor)

__version__ = "0.1.0"

__all__ = ["GroupDescriptor", "abelian", "compose", "dilate", "heisenberg", "homogeneous_norm",
           "inverse", "load_descriptor", "__version__"]
