"""Multi-scale feature extraction: divide, pool each block, concatenate.

Scale s splits the grid into 4**(s-1) equal blocks; each block is reduced to
one feature row by global max pooling plus global average pooling. Grids
must tile exactly (no padding, no ceiling partitions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PartitionError, ShapeError
from .pooling import multiscale_pool
from .tensor import Tensor


def block_count(scales: int) -> int:
    """Total rows produced across all scales: sum of 4**(s-1)."""
    return (4**scales - 1) // 3


def scale_index(scales: int):
    """(s, t) coordinates for every output row, ascending s, row-major t."""
    coords = []
    for s in range(1, scales + 1):
        for t in range(4 ** (s - 1)):
            coords.append((s, t))
    return coords


@dataclass
class MultiScaleFeatures:
    """Pooled block features, one row per (scale, block)."""

    matrix: Tensor
    scale_index: list

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.data.shape[0] != len(self.scale_index):
            raise ShapeError("multi-scale matrix rows must match the scale index")

    @property
    def rows(self) -> int:
        return self.matrix.data.shape[0]


def pool_block(block: Tensor) -> Tensor:
    """Max+avg pool one (h, w, D) block down to a (D,) vector."""
    if block.ndim != 3:
        raise ShapeError(f"expected an (h, w, D) block, got {block.shape}")
    h, w, d = block.data.shape
    if h < 1 or w < 1 or d < 1:
        raise ShapeError(f"empty block: {block.shape}")
    flat = np.ascontiguousarray(block.data).reshape(h * w, d)
    local = flat.argmax(axis=0)
    total = flat.cumsum(axis=0)[-1] if h * w > 1 else flat[0].copy()
    out = Tensor(flat.max(axis=0) + total / (h * w), (block,))
    if out.requires_grad:

        def _bw():
            g = out.grad
            grad = np.broadcast_to(g / (h * w), (h * w, d)).copy()
            grad[local, np.arange(d)] += g
            block._add_grad(grad.reshape(h, w, d))

        out._backward = _bw
    return out


def extract_multiscale(grid: Tensor, scales: int) -> MultiScaleFeatures:
    """Pool every block of every scale of a square (N, N, D) feature grid."""
    if grid.ndim != 3 or grid.data.shape[0] != grid.data.shape[1]:
        raise ShapeError(f"expected a square (N, N, D) grid, got {grid.shape}")
    if scales < 1:
        raise ShapeError(f"scales must be >= 1, got {scales}")
    n = grid.data.shape[0]
    divisor = 2 ** (scales - 1)
    if n % divisor != 0:
        raise PartitionError(
            f"grid side {n} is not divisible by {divisor}, required for {scales} scales")
    return MultiScaleFeatures(multiscale_pool(grid, scales), scale_index(scales))
