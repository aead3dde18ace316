"""Physics-embedded neural network (PENN) for sEMG-driven joint-angle estimation."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
