"""Pure-numpy multi-scale pooling kernels (fallback backend).

Bit-compatible with the compiled backend: per block and channel the maximum
is taken with first-index (row-major) tie-breaking, and the average comes
from a sequential row-major accumulation. ``cumsum`` is used instead of
``sum`` because numpy's pairwise summation would change the last bits for
single-channel inputs.
"""

from __future__ import annotations

import numpy as np


def pool_forward(grid: np.ndarray, scales: int):
    """Pool every block of every scale: (N, N, D) -> ((M, D), (M, D) argmax).

    Row m holds maxpool+avgpool of block (s, t), scales ascending, blocks in
    row-major order. The argmax array stores flat N*N cell indices used by
    the backward pass.
    """
    n, _, d = grid.shape
    m_total = (4**scales - 1) // 3
    out = np.empty((m_total, d))
    argmax = np.empty((m_total, d), dtype=np.int64)
    m = 0
    for s in range(1, scales + 1):
        nb = 2 ** (s - 1)
        bs = n // nb
        cells = bs * bs
        for bi in range(nb):
            for bj in range(nb):
                r0, c0 = bi * bs, bj * bs
                block = np.ascontiguousarray(grid[r0:r0 + bs, c0:c0 + bs, :])
                flat = block.reshape(cells, d)
                local = flat.argmax(axis=0)
                li, lj = local // bs, local % bs
                argmax[m] = (r0 + li) * n + (c0 + lj)
                total = flat.cumsum(axis=0)[-1] if cells > 1 else flat[0].copy()
                out[m] = flat.max(axis=0) + total / cells
                m += 1
    return out, argmax


def pool_backward(grad_out: np.ndarray, argmax: np.ndarray, n: int, scales: int) -> np.ndarray:
    """Scatter pooled-row gradients back onto the (N, N, D) grid."""
    d = grad_out.shape[1]
    grid_grad = np.zeros((n, n, d))
    flat = grid_grad.reshape(n * n, d)
    cols = np.arange(d)
    m = 0
    for s in range(1, scales + 1):
        nb = 2 ** (s - 1)
        bs = n // nb
        cells = bs * bs
        for bi in range(nb):
            for bj in range(nb):
                r0, c0 = bi * bs, bj * bs
                grid_grad[r0:r0 + bs, c0:c0 + bs, :] += grad_out[m] / cells
                flat[argmax[m], cols] += grad_out[m]
                m += 1
    return grid_grad
