"""Coarse-to-fine training engine with progressive ground-truth replacement."""

from c2f.rng import Rng
from c2f.tensor import Tensor, NonFiniteError, TensorError, no_grad

__all__ = ["Rng", "Tensor", "NonFiniteError", "TensorError", "no_grad"]
__version__ = "0.1.0"
