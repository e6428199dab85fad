"""Backend selection for the pooling kernels, and the differentiable op.

The compiled extension is preferred when importable; the pure-numpy fallback
is used otherwise. Both produce bit-identical results, so the choice never
changes any number downstream. Set ``SEMFUSE_POOL_BACKEND=numpy`` (or
``compiled``) to force one side, e.g. for the benchmark.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pool_numpy
from .errors import ConfigError, ShapeError
from .tensor import Tensor

_FORCED = os.environ.get("SEMFUSE_POOL_BACKEND", "").strip().lower()

try:
    from . import _pool_cy
except ImportError:
    _pool_cy = None

if _FORCED == "numpy":
    _kernels = _pool_numpy
    ACTIVE_BACKEND = "numpy"
elif _FORCED == "compiled":
    if _pool_cy is None:
        raise ConfigError("SEMFUSE_POOL_BACKEND=compiled but the extension is not built")
    _kernels = _pool_cy
    ACTIVE_BACKEND = "compiled"
elif _FORCED:
    raise ConfigError(f"unknown SEMFUSE_POOL_BACKEND value {_FORCED!r}")
elif _pool_cy is not None:
    _kernels = _pool_cy
    ACTIVE_BACKEND = "compiled"
else:
    _kernels = _pool_numpy
    ACTIVE_BACKEND = "numpy"


def available_backends() -> dict:
    """Name -> kernel module, for tests and the benchmark."""
    out = {"numpy": _pool_numpy}
    if _pool_cy is not None:
        out["compiled"] = _pool_cy
    return out


def multiscale_pool(grid: Tensor, scales: int) -> Tensor:
    """Differentiable multi-scale max+avg pooling: (N, N, D) -> (M, D).

    The average spreads its gradient uniformly over the block; the max routes
    its gradient to the first (row-major) maximal entry.
    """
    if grid.ndim != 3 or grid.data.shape[0] != grid.data.shape[1]:
        raise ShapeError(f"expected a square (N, N, D) grid, got {grid.shape}")
    if scales < 1:
        raise ShapeError(f"scales must be >= 1, got {scales}")
    n = grid.data.shape[0]
    data = np.ascontiguousarray(grid.data)
    pooled, argmax = _kernels.pool_forward(data, scales)
    out = Tensor(pooled, (grid,))
    if out.requires_grad:

        def _bw():
            grid._add_grad(_kernels.pool_backward(
                np.ascontiguousarray(out.grad), argmax, n, scales))

        out._backward = _bw
    return out
