"""Facial-region displacement trajectories and a graph-attention GRU detector
for manipulated face videos."""
from ._backend import NAME as backend

__version__ = "0.1.0"

__all__ = ["backend", "__version__"]
