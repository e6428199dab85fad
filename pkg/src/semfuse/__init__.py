"""Question-conditioned visual feature fusion with a text-queue semantic loss.

Desk-scale, fully differentiable, float64 throughout. The multi-scale
pooling kernels have a compiled core with a pure-numpy fallback selected at
import time; see :mod:`semfuse.pooling`.
"""

from .pooling import ACTIVE_BACKEND
from .tensor import Parameter, Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "Parameter", "ACTIVE_BACKEND", "__version__"]
